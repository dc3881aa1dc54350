use super::{SimState, NUM_BLOCKS, ZONE_CENTERS};

pub const FRAME_CELLS: usize = 16;
pub const FRAME_LEN: usize = FRAME_CELLS * FRAME_CELLS * 3;

const ZONE_TINT: f32 = 0.3;
const ZONE_CHANNEL: [usize; 2] = [0, 2];
const BLOCK_COLORS: [[f32; 3]; NUM_BLOCKS] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]];

/// 16x16 RGB raster stored row-major as `[y][x][channel]`.
pub type Frame = Vec<f32>;

pub fn cell(coord: f32) -> usize {
    ((FRAME_CELLS as f32 * coord).floor() as i64).clamp(0, FRAME_CELLS as i64 - 1) as usize
}

fn put(frame: &mut [f32], x: usize, y: usize, rgb: [f32; 3]) {
    let i = (y * FRAME_CELLS + x) * 3;
    frame[i..i + 3].copy_from_slice(&rgb);
}

/// Zones first (2x2 tinted cells nearest the zone center), then blocks,
/// then the end effector in white. Later layers overwrite earlier ones.
pub fn render_frame(state: &SimState) -> Frame {
    let mut frame = vec![0.0f32; FRAME_LEN];
    for (z, center) in ZONE_CENTERS.iter().enumerate() {
        let x0 = ((FRAME_CELLS as f32 * center[0]).round() as usize).clamp(1, FRAME_CELLS - 1) - 1;
        let y0 = ((FRAME_CELLS as f32 * center[1]).round() as usize).clamp(1, FRAME_CELLS - 1) - 1;
        let mut tint = [0.0; 3];
        tint[ZONE_CHANNEL[z]] = ZONE_TINT;
        for y in y0..y0 + 2 {
            for x in x0..x0 + 2 {
                put(&mut frame, x, y, tint);
            }
        }
    }
    for (p, color) in state.block_pos.iter().zip(BLOCK_COLORS.iter()) {
        put(&mut frame, cell(p[0]), cell(p[1]), *color);
    }
    put(&mut frame, cell(state.ee_pos[0]), cell(state.ee_pos[1]), [1.0; 3]);
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn px(frame: &[f32], x: usize, y: usize) -> [f32; 3] {
        let i = (y * FRAME_CELLS + x) * 3;
        [frame[i], frame[i + 1], frame[i + 2]]
    }

    #[test]
    fn end_effector_is_the_only_white_cell() {
        let f = render_frame(&SimState::canonical());
        let white: Vec<(usize, usize)> = (0..16)
            .flat_map(|y| (0..16).map(move |x| (x, y)))
            .filter(|&(x, y)| px(&f, x, y) == [1.0; 3])
            .collect();
        assert_eq!(white, vec![(8, 1)]);
        // zone A tint around (0.2, 0.8), zone B around (0.8, 0.8)
        assert_eq!(px(&f, 2, 12), [0.3, 0.0, 0.0]);
        assert_eq!(px(&f, 3, 13), [0.3, 0.0, 0.0]);
        assert_eq!(px(&f, 12, 12), [0.0, 0.0, 0.3]);
        assert_eq!(px(&f, 13, 13), [0.0, 0.0, 0.3]);
    }

    #[test]
    fn block_cells() {
        let f = render_frame(&SimState::canonical());
        assert_eq!(px(&f, 4, 4), [1.0, 0.0, 0.0]);
        assert_eq!(px(&f, 8, 4), [0.0, 1.0, 0.0]);
        assert_eq!(px(&f, 11, 4), [0.0, 0.0, 1.0]);
        assert_eq!(px(&f, 8, 8), [1.0, 1.0, 0.0]);
    }

    #[test]
    fn values_in_unit_range() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..100 {
            let mut s = SimState::canonical();
            s.ee_pos = [rng.next_f32(), rng.next_f32()];
            for b in s.block_pos.iter_mut() {
                *b = [rng.next_f32(), rng.next_f32()];
            }
            let f = render_frame(&s);
            assert_eq!(f.len(), FRAME_LEN);
            assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn edge_coordinates_clamp() {
        assert_eq!(cell(1.0), 15);
        assert_eq!(cell(0.0), 0);
        assert_eq!(cell(0.3), 4);
    }
}
