use crate::error::{Error, Result};

pub const DEFAULT_T: usize = 3;

/// Second-order SPAM features: averaged transition probabilities of
/// truncated pixel differences, straight directions first, then diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct SpamFeatures {
    pub values: Vec<f64>,
    pub t: usize,
}

impl SpamFeatures {
    pub fn dimension(t: usize) -> usize {
        2 * (2 * t + 1).pow(3)
    }

    /// Position of `P(u | v, w)` inside one direction group, where `w`, `v`,
    /// `u` are consecutive differences along the direction.
    pub fn block_index(t: usize, w: i32, v: i32, u: i32) -> usize {
        let k = 2 * t as i32 + 1;
        let t = t as i32;
        ((w + t) * k * k + (v + t) * k + (u + t)) as usize
    }
}

const STRAIGHT: [(i64, i64); 4] = [(0, 1), (0, -1), (1, 0), (-1, 0)];
const DIAGONAL: [(i64, i64); 4] = [(1, 1), (-1, -1), (1, -1), (-1, 1)];

/// Conditional transition matrix for one direction `(di, dj)`, flattened
/// with [`SpamFeatures::block_index`].
fn transitions(px: &[u8], width: usize, height: usize, t: usize, (di, dj): (i64, i64)) -> Vec<f64> {
    let k = 2 * t + 1;
    let mut counts = vec![0.0; k * k * k];
    let (w, h) = (width as i64, height as i64);
    let at = |i: i64, j: i64| px[(i * w + j) as usize] as i32;
    let trunc = |d: i32| d.clamp(-(t as i32), t as i32);
    for i in 0..h {
        let end_i = i + 3 * di;
        if end_i < 0 || end_i >= h {
            continue;
        }
        for j in 0..w {
            let end_j = j + 3 * dj;
            if end_j < 0 || end_j >= w {
                continue;
            }
            let p = [0, 1, 2, 3].map(|s| at(i + s * di, j + s * dj));
            let d = [trunc(p[0] - p[1]), trunc(p[1] - p[2]), trunc(p[2] - p[3])];
            counts[SpamFeatures::block_index(t, d[0], d[1], d[2])] += 1.0;
        }
    }
    for row in counts.chunks_mut(k) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|c| *c /= total);
        }
    }
    counts
}

/// SPAM features of an 8-bit grayscale image stored row-major.
pub fn spam_features(gray: &[u8], width: usize, height: usize, t: usize) -> Result<SpamFeatures> {
    if width < 3 || height < 3 {
        return Err(Error::invalid(format!(
            "SPAM needs at least 3 pixels per direction, image is {width}x{height}"
        )));
    }
    if gray.len() != width * height {
        return Err(Error::invalid("pixel count does not match dimensions"));
    }
    if t == 0 {
        return Err(Error::invalid("truncation threshold must be positive"));
    }
    let mut values = Vec::with_capacity(SpamFeatures::dimension(t));
    for group in [STRAIGHT, DIAGONAL] {
        let mut acc = vec![0.0; (2 * t + 1).pow(3)];
        for dir in group {
            for (a, v) in acc.iter_mut().zip(transitions(gray, width, height, t, dir)) {
                *a += v;
            }
        }
        values.extend(acc.into_iter().map(|v| v / 4.0));
    }
    Ok(SpamFeatures { values, t })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_one_hot() {
        let f = spam_features(&[77; 64], 8, 8, 3).unwrap();
        assert_eq!(f.values.len(), 686);
        let hot = SpamFeatures::block_index(3, 0, 0, 0);
        for (i, &v) in f.values.iter().enumerate() {
            let expected = if i % 343 == hot { 1.0 } else { 0.0 };
            assert_eq!(v, expected, "index {i}");
        }
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(spam_features(&[0; 6], 3, 2, 3).is_err());
        assert!(spam_features(&[0; 9], 3, 3, 3).is_ok());
    }
}
