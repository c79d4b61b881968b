//! Temporal concatenation of the conditioning and generated segments.

use crate::error::{Error, Result};

/// Per-frame exposure index `e`, CRF indicator `c` and relative frame index `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureIndex {
    pub exposure: f64,
    pub crf: f64,
    pub relative: f64,
}

/// Segment order along time: CRF conditioning, base, minus, plus.
pub const SEGMENTS: usize = 4;

/// Index table for `4 * frames_per_segment` concatenated frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub frames_per_segment: usize,
    pub ev: f64,
    pub index: Vec<ExposureIndex>,
}

impl Layout {
    pub fn new(frames_per_segment: usize, ev: f64) -> Self {
        // (exposure, crf) per segment
        let segs = [(0.0, 1.0), (0.0, 0.0), (-ev, 0.0), (ev, 0.0)];
        let index = segs
            .iter()
            .flat_map(|&(e, c)| {
                (0..frames_per_segment).map(move |r| ExposureIndex {
                    exposure: e,
                    crf: c,
                    relative: r as f64,
                })
            })
            .collect();
        Self {
            frames_per_segment,
            ev,
            index,
        }
    }

    pub fn total_frames(&self) -> usize {
        SEGMENTS * self.frames_per_segment
    }

    /// First frame of the generated segments.
    pub fn generated_start(&self) -> usize {
        self.frames_per_segment
    }
}

/// Concatenates equally long segments `[crf, base, minus, plus]` (each a list of
/// frames) along time and returns the frames with their index table.
pub fn concat_layout<T: Clone>(
    crf: &[T],
    base: &[T],
    minus: &[T],
    plus: &[T],
    ev: f64,
) -> Result<(Vec<T>, Layout)> {
    let n = crf.len();
    if n == 0 || base.len() != n || minus.len() != n || plus.len() != n {
        return Err(Error::Shape(format!(
            "segments must be equally long and non-empty: {} {} {} {}",
            crf.len(),
            base.len(),
            minus.len(),
            plus.len()
        )));
    }
    let frames = crf
        .iter()
        .chain(base)
        .chain(minus)
        .chain(plus)
        .cloned()
        .collect();
    Ok((frames, Layout::new(n, ev)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_frame_layout() {
        let (frames, layout) = concat_layout(&[0, 1], &[2, 3], &[4, 5], &[6, 7], 4.0).unwrap();
        assert_eq!(frames, (0..8).collect::<Vec<_>>());
        assert_eq!(layout.total_frames(), 8);
        let i0 = layout.index[0];
        assert_eq!((i0.exposure, i0.crf, i0.relative), (0.0, 1.0, 0.0));
        let i5 = layout.index[5];
        assert_eq!((i5.exposure, i5.crf, i5.relative), (-4.0, 0.0, 1.0));
        let plus = layout.index[6];
        assert_eq!((plus.exposure, plus.crf), (4.0, 0.0));
    }

    #[test]
    fn crf_and_base_share_exposure() {
        let layout = Layout::new(3, 4.0);
        for r in 0..3 {
            let (c, b) = (layout.index[r], layout.index[3 + r]);
            assert_eq!(c.exposure, b.exposure);
            assert_eq!(c.relative, b.relative);
            assert_ne!(c.crf, b.crf);
        }
        for seg in 0..4 {
            let rs: Vec<f64> = (0..3).map(|r| layout.index[seg * 3 + r].relative).collect();
            assert_eq!(rs, vec![0.0, 1.0, 2.0]);
        }
    }

    #[test]
    fn mismatched_segments() {
        assert!(concat_layout(&[0], &[1, 2], &[3], &[4], 4.0).is_err());
        assert!(concat_layout::<u8>(&[], &[], &[], &[], 4.0).is_err());
    }
}
