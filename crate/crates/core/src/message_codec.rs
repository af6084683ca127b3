//! Writing message bits through the grille into an expanded cover, and
//! reading them back out of any image.

use crate::error::{Error, Result};
use crate::grille_key::{GrilleKey, Mask};
use crate::image::{dequantize_value, quantize_value, ImageBuffer, Provenance};
use crate::keyed::KeyStream;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MessageBits {
    bits: Vec<u8>,
}

impl MessageBits {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("message bits must be 0 or 1"));
        }
        Ok(MessageBits { bits })
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        let bits = bytes
            .iter()
            .flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1))
            .collect();
        MessageBits { bits }
    }

    /// Parses a text of `0`/`1` characters; whitespace is ignored.
    pub fn from_bit_string(s: &str) -> Result<Self> {
        let mut bits = Vec::new();
        for (offset, ch) in s.char_indices() {
            match ch {
                '0' => bits.push(0),
                '1' => bits.push(1),
                c if c.is_whitespace() => {}
                c => {
                    return Err(Error::Parse {
                        offset,
                        message: format!("unexpected character {c:?} in bit string"),
                    })
                }
            }
        }
        Ok(MessageBits { bits })
    }

    pub fn to_bit_string(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b == 1 { '1' } else { '0' })
            .collect()
    }

    /// Packs MSB-first; a trailing partial byte is zero-padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|c| {
                c.iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (b << (7 - i)))
            })
            .collect()
    }

    pub fn random(len: usize, rng: &mut impl rand::Rng) -> Self {
        MessageBits {
            bits: (0..len).map(|_| rng.random_range(0..=1u8)).collect(),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn prefix(&self, n: usize) -> MessageBits {
        MessageBits {
            bits: self.bits[..n.min(self.bits.len())].to_vec(),
        }
    }
}

/// Keyed pseudorandom filler for grille cells beyond the message length.
pub fn padding_bits(key: &GrilleKey, count: usize) -> Vec<u8> {
    let mut ks = KeyStream::new("grille/padding", &key.stream_secret());
    (0..count).map(|_| ks.next_bit()).collect()
}

fn check_geometry(img: &ImageBuffer, key: &GrilleKey) -> Result<()> {
    if img.width() != key.width() || img.height() != key.height() {
        return Err(Error::invalid(format!(
            "image is {}x{}, key is {}x{}",
            img.width(),
            img.height(),
            key.width(),
            key.height()
        )));
    }
    if key.channel() >= img.channels() {
        return Err(Error::invalid(format!(
            "key channel {} but image has {} channels",
            key.channel(),
            img.channels()
        )));
    }
    Ok(())
}

fn set_bit(q: u8, bpi: u8, bit: u8) -> u8 {
    let shift = bpi - 1;
    (q & !(1 << shift)) | (bit << shift)
}

/// Build the expanded cover: for each grille cell in raster order, bit `i`
/// of the (padded) message replaces bit plane `bpi` of the quantized pixel
/// in the key's channel. Nothing else in the image changes.
pub fn expand_message(
    cover: &ImageBuffer,
    mask: &Mask,
    key: &GrilleKey,
    msg: &MessageBits,
) -> Result<ImageBuffer> {
    check_geometry(cover, key)?;
    key.check_pairing(mask)?;
    let capacity = key.capacity();
    if msg.len() > capacity {
        return Err(Error::CapacityExceeded {
            message: msg.len(),
            capacity,
        });
    }
    let padding = padding_bits(key, capacity - msg.len());
    let mut out = cover.clone().with_provenance(Provenance::ExpandedCover);
    for (pixel, &bit) in key
        .positions()
        .into_iter()
        .zip(msg.bits().iter().chain(&padding))
    {
        let q = quantize_value(cover.get(key.channel(), pixel));
        out.set(
            key.channel(),
            pixel,
            dequantize_value(set_bit(q, key.bpi(), bit)),
        );
    }
    Ok(out)
}

/// Read bit plane `bpi` of every grille cell, raster order. Always returns
/// `capacity` bits.
pub fn extract(img: &ImageBuffer, key: &GrilleKey) -> Result<MessageBits> {
    check_geometry(img, key)?;
    let shift = key.bpi() - 1;
    let bits = key
        .positions()
        .into_iter()
        .map(|p| (quantize_value(img.get(key.channel(), p)) >> shift) & 1)
        .collect();
    Ok(MessageBits { bits })
}

/// Hamming distance over length.
pub fn bit_error_rate(a: &MessageBits, b: &MessageBits) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "bit strings differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("bit error rate of empty messages"));
    }
    let errors = a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count();
    Ok(errors as f64 / a.len() as f64)
}
