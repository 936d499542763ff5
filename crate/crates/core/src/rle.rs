//! Run-length coding of binary masks.
//!
//! Runs walk the mask row-major and alternate false/true, always starting
//! with a (possibly empty) false run. The text form is the run lengths
//! separated by single spaces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

pub fn rle_encode(mask: &Mask) -> Rle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in mask.bits() {
        if b == current {
            run += 1;
        } else {
            counts.push(run);
            current = b;
            run = 1;
        }
    }
    counts.push(run);
    Rle {
        width: mask.width(),
        height: mask.height(),
        counts,
    }
}

pub fn rle_decode(rle: &Rle) -> Result<Mask> {
    let total = rle.width * rle.height;
    let sum: u64 = rle.counts.iter().map(|&c| u64::from(c)).sum();
    if sum != total as u64 {
        return Err(Error::MalformedRle(format!(
            "runs sum to {sum}, expected {}x{} = {total}",
            rle.width, rle.height
        )));
    }
    let mut bits = Vec::with_capacity(total);
    for (k, &c) in rle.counts.iter().enumerate() {
        bits.extend(std::iter::repeat_n(k % 2 == 1, c as usize));
    }
    Mask::from_bits(rle.width, rle.height, bits).map_err(|e| Error::MalformedRle(e.to_string()))
}

impl Rle {
    pub fn decode(&self) -> Result<Mask> {
        rle_decode(self)
    }

    /// Parse the space-separated run list for a mask of known size.
    pub fn parse_counts(width: usize, height: usize, text: &str) -> Result<Rle> {
        let counts = text
            .split_whitespace()
            .map(u32::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::MalformedRle(e.to_string()))?;
        let rle = Rle {
            width,
            height,
            counts,
        };
        rle_decode(&rle)?;
        Ok(rle)
    }
}

impl fmt::Display for Rle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, c) in self.counts.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        assert_eq!(rle_encode(&Mask::new(2, 2)).counts, vec![4]);
        assert_eq!(rle_encode(&Mask::full(2, 2)).counts, vec![0, 4]);
        let mut m = Mask::new(2, 2);
        m.set(0, 0, true);
        let rle = rle_encode(&m);
        assert_eq!(rle.counts, vec![0, 1, 3]);
        assert_eq!(rle.to_string(), "0 1 3");
    }

    #[test]
    fn decode_rejects_bad_totals() {
        let bad = Rle {
            width: 2,
            height: 2,
            counts: vec![1, 1],
        };
        assert!(matches!(rle_decode(&bad), Err(Error::MalformedRle(_))));
        let over = Rle {
            width: 2,
            height: 2,
            counts: vec![3, 3],
        };
        assert!(rle_decode(&over).is_err());
        assert!(Rle::parse_counts(2, 2, "0 x 3").is_err());
    }

    #[test]
    fn text_form_parses_back() {
        let rle = Rle::parse_counts(3, 1, "1 1 1").unwrap();
        assert_eq!(rle.decode().unwrap().bits(), &[false, true, false]);
    }
}
