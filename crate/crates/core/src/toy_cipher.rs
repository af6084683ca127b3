//! The line cipher in the plane.
//!
//! A message `m` is the point `(m, 0)` on the X axis; the key is any point
//! off the axis. Ciphertexts are points on the line through both, and the
//! receiver recovers `m` by intersecting the line through ciphertext and key
//! with the X axis. How the position along the line is sampled decides
//! whether the ciphertext looks like noise (uniform) or like data.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid("plane point coordinates must be finite"));
        }
        Ok(PlanePoint { x, y })
    }
}

fn check_key(key: PlanePoint) -> Result<()> {
    if key.y == 0.0 {
        return Err(Error::DegenerateKey);
    }
    Ok(())
}

/// `(m, 0) + r * (key - (m, 0))`.
pub fn toy_encrypt(m: f64, key: PlanePoint, r: f64) -> Result<PlanePoint> {
    check_key(key)?;
    if r == 0.0 {
        return Err(Error::invalid("r = 0 would emit the plaintext point"));
    }
    Ok(PlanePoint {
        x: m + r * (key.x - m),
        y: r * key.y,
    })
}

/// X intercept of the line through `c` and `key`.
pub fn toy_decrypt(c: PlanePoint, key: PlanePoint) -> Result<f64> {
    check_key(key)?;
    if c == key {
        return Err(Error::UndefinedLine);
    }
    let dy = key.y - c.y;
    if dy == 0.0 {
        return Err(Error::NoIntersection);
    }
    // Parameterize from the key: P(t) = key + t (c - key), y(t) = 0.
    let t = key.y / dy;
    Ok(key.x + t * (c.x - key.x))
}

/// Distribution of the line parameter `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SampleMode {
    /// `r` uniform on a bounded segment; ciphertexts look like noise.
    Uniform { lo: f64, hi: f64 },
    /// `r` normal around a mode; ciphertexts cluster like real data.
    DataLike { mean: f64, std_dev: f64 },
}

impl SampleMode {
    pub fn uniform() -> Self {
        SampleMode::Uniform { lo: 0.1, hi: 2.0 }
    }

    pub fn data_like() -> Self {
        SampleMode::DataLike {
            mean: 1.0,
            std_dev: 0.15,
        }
    }
}

pub fn toy_sample_mode(
    mode: SampleMode,
    m: f64,
    key: PlanePoint,
    rng: &mut impl Rng,
) -> Result<PlanePoint> {
    check_key(key)?;
    let r = match mode {
        SampleMode::Uniform { lo, hi } => {
            if !(lo < hi) || (lo <= 0.0 && hi >= 0.0) {
                return Err(Error::invalid("uniform segment must exclude r = 0"));
            }
            rng.random_range(lo..hi)
        }
        SampleMode::DataLike { mean, std_dev } => {
            let normal = Normal::new(mean, std_dev)
                .map_err(|e| Error::invalid(format!("bad data density: {e}")))?;
            loop {
                let r: f64 = normal.sample(rng);
                if r != 0.0 {
                    break r;
                }
            }
        }
    };
    toy_encrypt(m, key, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyed::seeded_rng;

    fn pt(x: f64, y: f64) -> PlanePoint {
        PlanePoint::new(x, y).unwrap()
    }

    #[test]
    fn encrypt_example() {
        // Oracle: (5,0) + 0.5 * ((0,1) - (5,0)) = (2.5, 0.5).
        assert_eq!(toy_encrypt(5.0, pt(0.0, 1.0), 0.5).unwrap(), pt(2.5, 0.5));
    }

    #[test]
    fn r_one_returns_key() {
        let k = pt(-3.25, 7.5);
        assert_eq!(toy_encrypt(11.0, k, 1.0).unwrap(), k);
    }

    #[test]
    fn degenerate_key() {
        assert!(matches!(
            toy_encrypt(1.0, pt(3.0, 0.0), 0.5),
            Err(Error::DegenerateKey)
        ));
        assert!(matches!(
            toy_decrypt(pt(1.0, 1.0), pt(3.0, 0.0)),
            Err(Error::DegenerateKey)
        ));
    }

    #[test]
    fn zero_r_rejected() {
        assert!(toy_encrypt(1.0, pt(0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn decrypt_example() {
        // Line through (2.5,0.5) and (0,1): y = 1 - x/5, crosses at x = 5.
        assert!((toy_decrypt(pt(2.5, 0.5), pt(0.0, 1.0)).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn decrypt_errors() {
        assert!(matches!(
            toy_decrypt(pt(1.0, 1.0), pt(0.0, 1.0)),
            Err(Error::NoIntersection)
        ));
        assert!(matches!(
            toy_decrypt(pt(0.0, 1.0), pt(0.0, 1.0)),
            Err(Error::UndefinedLine)
        ));
    }

    #[test]
    fn sampling_modes_decrypt() {
        let mut rng = seeded_rng(1);
        let k = pt(0.7, -2.0);
        for mode in [SampleMode::uniform(), SampleMode::data_like()] {
            for i in 0..100 {
                let m = i as f64 * 0.37 - 10.0;
                let c = toy_sample_mode(mode, m, k, &mut rng).unwrap();
                assert!((toy_decrypt(c, k).unwrap() - m).abs() <= 1e-9 * m.abs().max(1.0));
            }
        }
    }
}
