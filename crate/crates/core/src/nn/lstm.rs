//! Stacked LSTM over a batch of variable-length sequences.
//!
//! Gates per layer, with `z = [x; h]`:
//! `i = σ(W_i z + b_i)`, `f = σ(W_f z + b_f)`, `o = σ(W_o z + b_o)`,
//! `g = tanh(W_g z + b_g)`, `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.
//!
//! The weight of each layer is one `(in + H) x 4H` matrix with gate
//! columns in the order `[i | f | o | g]`. Sequences must be sorted by
//! length, longest first, so the rows still running at step `t` always
//! form a prefix of the batch.

use super::kernels::{gemm_acc, gemm_nt, gemm_tn_acc, sum_rows_acc};
use super::{sigmoid, Grads, Init, ParamDecl, ParamView, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub first_param: usize,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    z: Vec<Vec<T>>,
    gates: Vec<Vec<T>>,
    c_prev: Vec<Vec<T>>,
    tanh_c: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    pub lens: Vec<usize>,
    counts: Vec<usize>,
    layers: Vec<LayerCache<T>>,
}

impl LstmStack {
    pub fn new(prefix: &str, input: usize, hidden: usize, layers: usize, first_param: usize) -> Self {
        assert!(input > 0 && hidden > 0 && layers > 0);
        Self {
            prefix: prefix.to_string(),
            input,
            hidden,
            layers,
            first_param,
        }
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.layers
    }

    fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input
        } else {
            self.hidden
        }
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let h = self.hidden;
        (0..self.layers)
            .flat_map(|l| {
                let zin = self.layer_input(l) + h;
                [
                    ParamDecl::new(format!("{}.{l}.weight", self.prefix), &[zin, 4 * h], Init::Xavier { fan_in: zin, fan_out: h }),
                    ParamDecl::new(format!("{}.{l}.bias", self.prefix), &[4 * h], Init::LstmBias { hidden: h }),
                ]
            })
            .collect()
    }

    /// `steps[t]` holds the inputs of the rows still running at step `t`
    /// (`counts[t] x input`). Returns the top layer's hidden state at each
    /// row's last step (`rows x hidden`).
    pub fn forward<T: Real, P: ParamView<T>>(&self, params: &P, steps: &[Vec<T>], lens: &[usize]) -> (Vec<T>, LstmCache<T>) {
        assert!(!lens.is_empty() && lens.iter().all(|&n| n > 0), "empty sequence");
        assert!(lens.windows(2).all(|w| w[0] >= w[1]), "sequences must be sorted longest first");
        assert_eq!(steps.len(), lens[0]);
        let counts: Vec<usize> = (0..lens[0]).map(|t| lens.iter().filter(|&&n| n > t).count()).collect();
        let mut layers = Vec::with_capacity(self.layers);
        let mut inputs: Vec<Vec<T>> = steps.to_vec();
        let mut final_h = Vec::new();
        for l in 0..self.layers {
            let (cache, hs, fh) = self.layer_forward(params, l, &inputs, lens, &counts);
            layers.push(cache);
            inputs = hs;
            final_h = fh;
        }
        (
            final_h,
            LstmCache {
                lens: lens.to_vec(),
                counts,
                layers,
            },
        )
    }

    #[allow(clippy::type_complexity)]
    fn layer_forward<T: Real, P: ParamView<T>>(
        &self,
        params: &P,
        l: usize,
        xs: &[Vec<T>],
        lens: &[usize],
        counts: &[usize],
    ) -> (LayerCache<T>, Vec<Vec<T>>, Vec<T>) {
        let h_dim = self.hidden;
        let g_dim = 4 * h_dim;
        let inp = self.layer_input(l);
        let zdim = inp + h_dim;
        let w = params.tensor(self.first_param + 2 * l);
        let b = params.tensor(self.first_param + 2 * l + 1);
        let rows = lens.len();
        let mut h = vec![T::zero(); rows * h_dim];
        let mut c = vec![T::zero(); rows * h_dim];
        let mut final_h = vec![T::zero(); rows * h_dim];
        let mut cache = LayerCache {
            z: Vec::with_capacity(counts.len()),
            gates: Vec::with_capacity(counts.len()),
            c_prev: Vec::with_capacity(counts.len()),
            tanh_c: Vec::with_capacity(counts.len()),
        };
        let mut hs = Vec::with_capacity(counts.len());
        for (t, &n) in counts.iter().enumerate() {
            let x = &xs[t];
            debug_assert_eq!(x.len(), n * inp);
            let mut z = Vec::with_capacity(n * zdim);
            for r in 0..n {
                z.extend_from_slice(&x[r * inp..(r + 1) * inp]);
                z.extend_from_slice(&h[r * h_dim..(r + 1) * h_dim]);
            }
            let mut a = Vec::with_capacity(n * g_dim);
            for _ in 0..n {
                a.extend_from_slice(b);
            }
            gemm_acc(&mut a, &z, w, n, zdim, g_dim);
            let c_prev = c[..n * h_dim].to_vec();
            let mut tanh_c = vec![T::zero(); n * h_dim];
            for r in 0..n {
                let ar = &mut a[r * g_dim..(r + 1) * g_dim];
                for j in 0..h_dim {
                    let ig = sigmoid(ar[j]);
                    let fg = sigmoid(ar[h_dim + j]);
                    let og = sigmoid(ar[2 * h_dim + j]);
                    let gg = ar[3 * h_dim + j].tanh();
                    ar[j] = ig;
                    ar[h_dim + j] = fg;
                    ar[2 * h_dim + j] = og;
                    ar[3 * h_dim + j] = gg;
                    let k = r * h_dim + j;
                    let cn = fg * c[k] + ig * gg;
                    let tc = cn.tanh();
                    c[k] = cn;
                    tanh_c[k] = tc;
                    h[k] = og * tc;
                }
                if lens[r] == t + 1 {
                    final_h[r * h_dim..(r + 1) * h_dim].copy_from_slice(&h[r * h_dim..(r + 1) * h_dim]);
                }
            }
            hs.push(h[..n * h_dim].to_vec());
            cache.z.push(z);
            cache.gates.push(a);
            cache.c_prev.push(c_prev);
            cache.tanh_c.push(tanh_c);
        }
        (cache, hs, final_h)
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// states. Returns the per-step input gradients of the bottom layer.
    pub fn backward<T: Real, P: ParamView<T>>(&self, params: &P, cache: &LstmCache<T>, d_final: &[T], grads: &mut Grads<T>) -> Vec<Vec<T>> {
        let h_dim = self.hidden;
        let rows = cache.lens.len();
        debug_assert_eq!(d_final.len(), rows * h_dim);
        // external hidden-state gradient for the top layer: only at each row's last step
        let mut dh_ext: Vec<Vec<T>> = cache.counts.iter().map(|&n| vec![T::zero(); n * h_dim]).collect();
        for (r, &len) in cache.lens.iter().enumerate() {
            dh_ext[len - 1][r * h_dim..(r + 1) * h_dim].copy_from_slice(&d_final[r * h_dim..(r + 1) * h_dim]);
        }
        for l in (0..self.layers).rev() {
            dh_ext = self.layer_backward(params, l, &cache.layers[l], &cache.counts, &dh_ext, rows, grads);
        }
        dh_ext
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward<T: Real, P: ParamView<T>>(
        &self,
        params: &P,
        l: usize,
        lc: &LayerCache<T>,
        counts: &[usize],
        dh_ext: &[Vec<T>],
        rows: usize,
        grads: &mut Grads<T>,
    ) -> Vec<Vec<T>> {
        let h_dim = self.hidden;
        let g_dim = 4 * h_dim;
        let inp = self.layer_input(l);
        let zdim = inp + h_dim;
        let wi = self.first_param + 2 * l;
        let w = params.tensor(wi);
        let one = T::one();
        let mut dh_rec = vec![T::zero(); rows * h_dim];
        let mut dc_rec = vec![T::zero(); rows * h_dim];
        let mut dxs: Vec<Vec<T>> = vec![Vec::new(); counts.len()];
        let mut da = Vec::new();
        let mut dz = Vec::new();
        for t in (0..counts.len()).rev() {
            let n = counts[t];
            let gates = &lc.gates[t];
            da.clear();
            da.resize(n * g_dim, T::zero());
            for r in 0..n {
                for j in 0..h_dim {
                    let k = r * h_dim + j;
                    let gi = r * g_dim + j;
                    let (ig, fg, og, gg) = (gates[gi], gates[gi + h_dim], gates[gi + 2 * h_dim], gates[gi + 3 * h_dim]);
                    let tc = lc.tanh_c[t][k];
                    let dh = dh_ext[t][k] + dh_rec[k];
                    let dc = dc_rec[k] + dh * og * (one - tc * tc);
                    dc_rec[k] = dc * fg;
                    da[gi] = dc * gg * ig * (one - ig);
                    da[gi + h_dim] = dc * lc.c_prev[t][k] * fg * (one - fg);
                    da[gi + 2 * h_dim] = dh * tc * og * (one - og);
                    da[gi + 3 * h_dim] = dc * ig * (one - gg * gg);
                }
            }
            gemm_tn_acc(&mut grads[wi], &lc.z[t], &da, n, zdim, g_dim);
            sum_rows_acc(&mut grads[wi + 1], &da, n, g_dim);
            dz.clear();
            dz.resize(n * zdim, T::zero());
            gemm_nt(&mut dz, &da, w, n, zdim, g_dim);
            let mut dx = Vec::with_capacity(n * inp);
            for r in 0..n {
                dx.extend_from_slice(&dz[r * zdim..r * zdim + inp]);
                dh_rec[r * h_dim..(r + 1) * h_dim].copy_from_slice(&dz[r * zdim + inp..(r + 1) * zdim]);
            }
            dxs[t] = dx;
        }
        dxs
    }
}
