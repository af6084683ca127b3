//! Digital Cardan grilles and image-completion masks.
//!
//! A [`Mask`] marks which pixels of a corrupted image are kept (1) and which
//! are left for the generator to complete (0). A [`GrilleKey`] is the shared
//! secret: a binary matrix selecting the kept pixels that carry message bits,
//! plus the bit plane and color channel those bits live in.

use serde::{Deserialize, Serialize};

use crate::error::{json_parse_error, Error, Result};
use crate::keyed::{sha256_parts, KeyStream, Secret};

pub const KEY_FORMAT: &str = "cardan-grille-key";
pub const MASK_FORMAT: &str = "completion-mask";
pub const FORMAT_VERSION: u32 = 1;

/// Guard against `density * count` landing a hair below an integer.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPattern {
    /// Missing pixels scattered uniformly at random.
    RandomScatter,
    /// One contiguous near-rectangular hole.
    Block,
    /// Whole rows or whole columns (chosen at random) removed.
    Stripes,
}

impl std::str::FromStr for MaskPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-scatter" | "random" => Ok(MaskPattern::RandomScatter),
            "block" => Ok(MaskPattern::Block),
            "stripes" => Ok(MaskPattern::Stripes),
            other => Err(Error::invalid(format!("unknown mask pattern {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    known: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, known: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if known.len() != width * height {
            return Err(Error::invalid(format!(
                "mask has {} cells, expected {}x{}",
                known.len(),
                width,
                height
            )));
        }
        Ok(Mask {
            width,
            height,
            known,
        })
    }

    pub fn all_known(width: usize, height: usize) -> Result<Self> {
        Mask::new(width, height, vec![true; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn is_known(&self, row: usize, col: usize) -> bool {
        self.known[row * self.width + col]
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    pub fn missing_count(&self) -> usize {
        self.known.len() - self.known_count()
    }

    pub fn known_rate(&self) -> f64 {
        self.known_count() as f64 / self.known.len() as f64
    }

    /// Raster indices of known cells.
    pub fn known_indices(&self) -> Vec<usize> {
        self.known
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect()
    }

    /// SHA-256 over the geometry and the packed known bits, hex encoded.
    pub fn digest(&self) -> String {
        let packed = pack_bits(&self.known);
        hex::encode(sha256_parts(&[
            b"grille/mask",
            &(self.width as u32).to_le_bytes(),
            &(self.height as u32).to_le_bytes(),
            &packed,
        ]))
    }

    pub fn to_json(&self) -> String {
        let file = MaskFile {
            format: MASK_FORMAT.to_string(),
            version: FORMAT_VERSION,
            width: self.width,
            height: self.height,
            known_runs: run_length_encode(&self.known),
            digest: self.digest(),
        };
        serde_json::to_string_pretty(&file).expect("mask serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MaskFile = serde_json::from_str(text).map_err(|e| json_parse_error(text, &e))?;
        if file.format != MASK_FORMAT || file.version != FORMAT_VERSION {
            return Err(Error::Parse {
                offset: 0,
                message: format!("unsupported mask format {} v{}", file.format, file.version),
            });
        }
        let known = run_length_decode(&file.known_runs, file.width * file.height)
            .ok_or_else(|| Error::invalid("mask run lengths do not cover the image"))?;
        let mask = Mask::new(file.width, file.height, known)?;
        if mask.digest() != file.digest {
            return Err(Error::invalid("mask digest does not match its contents"));
        }
        Ok(mask)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskFile {
    format: String,
    version: u32,
    width: usize,
    height: usize,
    known_runs: Vec<usize>,
    digest: String,
}

/// Build a completion mask with exactly `round(w*h*missing_fraction)`
/// missing cells. Deterministic in `rng_seed`.
pub fn generate_completion_mask(
    width: usize,
    height: usize,
    pattern: MaskPattern,
    missing_fraction: f64,
    rng_seed: u64,
) -> Result<Mask> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    if !(0.0..=1.0).contains(&missing_fraction) {
        return Err(Error::invalid(format!(
            "missing fraction {missing_fraction} outside [0, 1]"
        )));
    }
    let total = width * height;
    let missing = ((total as f64) * missing_fraction).round() as usize;
    let mut known = vec![true; total];
    let mut ks = KeyStream::new("grille/mask", &rng_seed.to_le_bytes());

    match pattern {
        MaskPattern::RandomScatter => {
            let all: Vec<usize> = (0..total).collect();
            for i in ks.choose_prefix(&all, missing) {
                known[i] = false;
            }
        }
        MaskPattern::Block => {
            if missing > 0 {
                let bw = ((missing as f64).sqrt().ceil() as usize).clamp(1, width);
                let bh = missing.div_ceil(bw).min(height);
                // bw * bh >= missing and bw <= width.
                let bw = missing.div_ceil(bh);
                let top = ks.below((height - bh + 1) as u64) as usize;
                let left = ks.below((width - bw + 1) as u64) as usize;
                for n in 0..missing {
                    let (r, c) = (top + n / bw, left + n % bw);
                    known[r * width + c] = false;
                }
            }
        }
        MaskPattern::Stripes => {
            let horizontal = ks.next_bit() == 1;
            let (lines, len) = if horizontal {
                (height, width)
            } else {
                (width, height)
            };
            let order: Vec<usize> = (0..lines).collect();
            let order = ks.choose_prefix(&order, lines);
            for n in 0..missing {
                let line = order[n / len];
                let along = n % len;
                let idx = if horizontal {
                    line * width + along
                } else {
                    along * width + line
                };
                known[idx] = false;
            }
        }
    }
    Mask::new(width, height, known)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrilleKey {
    width: usize,
    height: usize,
    channel: usize,
    bpi: u8,
    cells: Vec<bool>,
    seed: Option<Secret>,
    density: Option<f64>,
    mask_digest: String,
}

impl GrilleKey {
    /// A key with explicitly chosen cells. The cells must lie inside the
    /// known region of `mask`.
    pub fn explicit(cells: Vec<bool>, mask: &Mask, bpi: u8, channel: usize) -> Result<Self> {
        let key = GrilleKey {
            width: mask.width,
            height: mask.height,
            channel,
            bpi,
            cells,
            seed: None,
            density: None,
            mask_digest: mask.digest(),
        };
        key.validate()?;
        key.check_pairing(mask)?;
        Ok(key)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidKey("dimensions must be positive".into()));
        }
        if self.cells.len() != self.width * self.height {
            return Err(Error::InvalidKey(format!(
                "{} cells for a {}x{} grille",
                self.cells.len(),
                self.width,
                self.height
            )));
        }
        if !(1..=8).contains(&self.bpi) {
            return Err(Error::InvalidKey(format!(
                "bit plane index {} outside 1..=8",
                self.bpi
            )));
        }
        if let Some(d) = self.density {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::InvalidKey(format!("density {d} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    pub fn bpi(&self) -> u8 {
        self.bpi
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn seed(&self) -> Option<&Secret> {
        self.seed.as_ref()
    }

    pub fn density(&self) -> Option<f64> {
        self.density
    }

    pub fn mask_digest(&self) -> &str {
        &self.mask_digest
    }

    /// Number of message bits the grille holds.
    pub fn capacity(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Raster (row-major) indices of the grille's 1-cells; this order is
    /// the bit order of the message.
    pub fn positions(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| c.then_some(i))
            .collect()
    }

    /// Same key with a different bit plane.
    pub fn with_bpi(&self, bpi: u8) -> Result<Self> {
        let mut k = self.clone();
        k.bpi = bpi;
        k.validate()?;
        Ok(k)
    }

    /// Check that this key was made for `mask` and only uses known cells.
    pub fn check_pairing(&self, mask: &Mask) -> Result<()> {
        if mask.width != self.width || mask.height != self.height {
            return Err(Error::KeyPairing(format!(
                "key is {}x{}, mask is {}x{}",
                self.width, self.height, mask.width, mask.height
            )));
        }
        if mask.digest() != self.mask_digest {
            return Err(Error::KeyPairing("mask digest mismatch".into()));
        }
        if self.cells.iter().zip(&mask.known).any(|(&c, &k)| c && !k) {
            return Err(Error::KeyPairing(
                "grille cell outside the known region".into(),
            ));
        }
        Ok(())
    }

    /// Secret bytes used to key auxiliary streams such as message padding.
    pub(crate) fn stream_secret(&self) -> Vec<u8> {
        match &self.seed {
            Some(s) => s.0.to_vec(),
            None => {
                let packed = pack_bits(&self.cells);
                sha256_parts(&[b"grille/explicit-key", &packed]).to_vec()
            }
        }
    }

    pub fn digest(&self) -> String {
        crate::keyed::sha256_hex(&serialize_key(self))
    }
}

/// Derive a grille from a shared secret: a keyed shuffle of the mask's known
/// cells, truncated to `floor(density * known_count)` entries.
pub fn derive_grille(
    seed: &Secret,
    mask: &Mask,
    density: f64,
    bpi: u8,
    channel: usize,
) -> Result<GrilleKey> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid(format!("density {density} outside (0, 1]")));
    }
    if !(1..=8).contains(&bpi) {
        return Err(Error::invalid(format!(
            "bit plane index {bpi} outside 1..=8"
        )));
    }
    let known = mask.known_indices();
    if known.is_empty() {
        return Err(Error::EmptyCapacity);
    }
    let take = (density * known.len() as f64 + FLOOR_SLACK).floor() as usize;
    let mut ks = KeyStream::new("grille/cells", &seed.0);
    let mut cells = vec![false; mask.width * mask.height];
    for i in ks.choose_prefix(&known, take) {
        cells[i] = true;
    }
    Ok(GrilleKey {
        width: mask.width,
        height: mask.height,
        channel,
        bpi,
        cells,
        seed: Some(*seed),
        density: Some(density),
        mask_digest: mask.digest(),
    })
}

pub fn capacity(key: &GrilleKey) -> usize {
    key.capacity()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyFile {
    format: String,
    version: u32,
    width: usize,
    height: usize,
    channel: usize,
    bpi: u8,
    mode: KeyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<f64>,
    cell_runs: Vec<usize>,
    mask_digest: String,
}

#[derive(Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum KeyMode {
    Seed,
    Explicit,
}

/// Key file bytes: pretty-printed JSON. Cells are always stored run-length
/// encoded so decryption does not need the completion mask.
pub fn serialize_key(key: &GrilleKey) -> Vec<u8> {
    let file = KeyFile {
        format: KEY_FORMAT.to_string(),
        version: FORMAT_VERSION,
        width: key.width,
        height: key.height,
        channel: key.channel,
        bpi: key.bpi,
        mode: if key.seed.is_some() {
            KeyMode::Seed
        } else {
            KeyMode::Explicit
        },
        seed: key.seed.map(|s| s.to_hex()),
        density: key.density,
        cell_runs: run_length_encode(&key.cells),
        mask_digest: key.mask_digest.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&file).expect("key serializes");
    out.push(b'\n');
    out
}

pub fn parse_key(bytes: &[u8]) -> Result<GrilleKey> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        message: "key file is not UTF-8".into(),
    })?;
    let file: KeyFile = serde_json::from_str(text).map_err(|e| json_parse_error(text, &e))?;
    if file.format != KEY_FORMAT {
        return Err(Error::Parse {
            offset: 0,
            message: format!("not a grille key file (format {:?})", file.format),
        });
    }
    if file.version != FORMAT_VERSION {
        return Err(Error::InvalidKey(format!(
            "unsupported key version {}",
            file.version
        )));
    }
    let total = file
        .width
        .checked_mul(file.height)
        .ok_or_else(|| Error::InvalidKey("dimensions overflow".into()))?;
    let cells = run_length_decode(&file.cell_runs, total)
        .ok_or_else(|| Error::InvalidKey("cell runs do not cover the grille".into()))?;
    let seed = match (&file.mode, &file.seed) {
        (KeyMode::Seed, Some(hex)) => Some(
            Secret::from_hex(hex)
                .ok_or_else(|| Error::InvalidKey("seed must be 64 hex digits".into()))?,
        ),
        (KeyMode::Seed, None) => {
            return Err(Error::InvalidKey("seed-mode key without seed".into()))
        }
        (KeyMode::Explicit, None) => None,
        (KeyMode::Explicit, Some(_)) => {
            return Err(Error::InvalidKey("explicit key carries a seed".into()))
        }
    };
    if file.mask_digest.len() != 64 || hex::decode(&file.mask_digest).is_err() {
        return Err(Error::InvalidKey(
            "mask digest must be 64 hex digits".into(),
        ));
    }
    let key = GrilleKey {
        width: file.width,
        height: file.height,
        channel: file.channel,
        bpi: file.bpi,
        cells,
        seed,
        density: file.density,
        mask_digest: file.mask_digest,
    };
    key.validate()?;
    Ok(key)
}

/// Alternating run lengths, starting with a (possibly empty) run of zeros.
fn run_length_encode(bits: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

fn run_length_decode(runs: &[usize], total: usize) -> Option<Vec<bool>> {
    let mut out = Vec::with_capacity(total);
    let mut value = false;
    for &r in runs {
        if out.len() + r > total {
            return None;
        }
        out.extend(std::iter::repeat_n(value, r));
        value = !value;
    }
    (out.len() == total).then_some(out)
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| {
            c.iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i))
        })
        .collect()
}
