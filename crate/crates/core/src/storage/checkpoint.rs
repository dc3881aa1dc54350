use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{io_err, StorageError};
use crate::nn::{AdamState, ParamSet, Tensor};

pub const CKPT_MAGIC: &[u8; 9] = b"SEILCKPT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    Ema,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    role: Role,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tensors: Vec<Entry>,
    adam_step: Option<u64>,
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Magic, u32 little-endian header length, JSON header, f32 little-endian
/// payload in header order, u64 little-endian FNV-1a of the payload.
pub fn encode_checkpoint(p: &ParamSet) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut tensors: Vec<&Tensor> = Vec::new();
    let add = |role: Role, ts: &'_ [Tensor], entries: &mut Vec<Entry>| {
        for (name, t) in p.names.iter().zip(ts) {
            entries.push(Entry {
                name: name.clone(),
                shape: t.shape.clone(),
                role,
            });
        }
    };
    add(Role::Param, &p.tensors, &mut entries);
    tensors.extend(&p.tensors);
    if let Some(e) = &p.ema {
        add(Role::Ema, e, &mut entries);
        tensors.extend(e);
    }
    if let Some(a) = &p.adam {
        add(Role::AdamM, &a.m, &mut entries);
        add(Role::AdamV, &a.v, &mut entries);
        tensors.extend(&a.m);
        tensors.extend(&a.v);
    }
    let header = serde_json::to_vec(&Header {
        tensors: entries,
        adam_step: p.adam.as_ref().map(|a| a.step),
    })
    .unwrap();
    let mut payload = Vec::with_capacity(4 * tensors.iter().map(|t| t.len()).sum::<usize>());
    for t in tensors {
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(CKPT_MAGIC.len() + 4 + header.len() + payload.len() + 8);
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum(&payload).to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet, StorageError> {
    if bytes.len() < CKPT_MAGIC.len() || &bytes[..CKPT_MAGIC.len()] != CKPT_MAGIC {
        return Err(StorageError::BadMagic);
    }
    let rest = &bytes[CKPT_MAGIC.len()..];
    if rest.len() < 4 {
        return Err(StorageError::BadFormat("truncated before header length".into()));
    }
    let hlen = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < hlen {
        return Err(StorageError::BadFormat("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen]).map_err(|e| StorageError::BadFormat(format!("header: {e}")))?;
    let rest = &rest[hlen..];
    let total: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if rest.len() != 4 * total + 8 {
        return Err(StorageError::BadFormat(format!("payload is {} bytes, header implies {}", rest.len(), 4 * total + 8)));
    }
    let (payload, tail) = rest.split_at(4 * total);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = checksum(payload);
    if stored != computed {
        return Err(StorageError::Checksum { stored, computed });
    }

    let mut floats = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut groups: [Vec<(String, Tensor)>; 4] = Default::default();
    let mut last_role = 0;
    for e in &header.tensors {
        let n = e.shape.iter().product();
        let data: Vec<f32> = floats.by_ref().take(n).collect();
        let slot = e.role as usize;
        if slot < last_role {
            return Err(StorageError::BadFormat("roles out of order".into()));
        }
        last_role = slot;
        groups[slot].push((e.name.clone(), Tensor::from_vec(&e.shape, data)));
    }
    let [params, ema, m, v] = groups;
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mirror = |g: &[(String, Tensor)], role: &str| -> Result<Vec<Tensor>, StorageError> {
        if g.len() != params.len() {
            return Err(StorageError::ShapeMismatch(format!("{} {role} tensors for {} params", g.len(), params.len())));
        }
        for ((n, t), (pn, pt)) in g.iter().zip(&params) {
            if n != pn || t.shape != pt.shape {
                return Err(StorageError::ShapeMismatch(format!("{role} '{n}' {:?} vs param '{pn}' {:?}", t.shape, pt.shape)));
            }
        }
        Ok(g.iter().map(|(_, t)| t.clone()).collect())
    };
    let ema = if ema.is_empty() { None } else { Some(mirror(&ema, "ema")?) };
    let adam = match (m.is_empty(), v.is_empty(), header.adam_step) {
        (true, true, None) => None,
        (false, false, Some(step)) => Some(AdamState {
            m: mirror(&m, "adam_m")?,
            v: mirror(&v, "adam_v")?,
            step,
        }),
        _ => return Err(StorageError::BadFormat("incomplete optimizer state".into())),
    };
    Ok(ParamSet {
        names,
        tensors: params.into_iter().map(|(_, t)| t).collect(),
        ema,
        adam,
    })
}

pub fn write_checkpoint(path: &Path, p: &ParamSet) -> Result<(), StorageError> {
    fs::write(path, encode_checkpoint(p)).map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<ParamSet, StorageError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{adam_step, init_ema, AdamConfig, Model};
    use crate::policy::{Policy, PolicySpec};

    fn trained() -> ParamSet {
        let policy = Policy::new(PolicySpec {
            hidden: vec![6],
            ..Default::default()
        });
        let mut p = policy.init(3);
        init_ema(&mut p);
        let g: Vec<Vec<f32>> = p.tensors.iter().map(|t| vec![0.25; t.len()]).collect();
        adam_step(&mut p, &g, &AdamConfig::default());
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = trained();
        let q = decode_checkpoint(&encode_checkpoint(&p)).unwrap();
        assert!(q.bit_eq(&p));
        assert_eq!(q.adam.as_ref().unwrap().step, 1);
        let bare = Policy::new(PolicySpec::default()).model.init(1);
        assert!(decode_checkpoint(&encode_checkpoint(&bare)).unwrap().bit_eq(&bare));
    }

    #[test]
    fn distinct_failures() {
        let bytes = encode_checkpoint(&trained());
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 20] ^= 0x01;
        assert!(matches!(decode_checkpoint(&flipped), Err(StorageError::Checksum { .. })));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&magic), Err(StorageError::BadMagic)));

        let hlen = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let header_only = &bytes[..13 + hlen];
        assert!(matches!(decode_checkpoint(header_only), Err(StorageError::BadFormat(_))));
        assert!(matches!(decode_checkpoint(&bytes[..20]), Err(StorageError::BadFormat(_))));
        assert!(matches!(decode_checkpoint(b"SEIL"), Err(StorageError::BadMagic)));
    }

    #[test]
    fn mismatched_shadow_is_a_shape_error() {
        let mut p = trained();
        p.adam = None;
        let mut ema = p.ema.take().unwrap();
        ema[0] = Tensor::zeros(&[ema[0].len()]);
        p.ema = Some(ema);
        assert!(matches!(decode_checkpoint(&encode_checkpoint(&p)), Err(StorageError::ShapeMismatch(_))));
    }
}
