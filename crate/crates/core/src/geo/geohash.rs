//! Base32 geohash codec.
//!
//! Cells are half-open `[min, max)` on both axes: a coordinate sitting exactly
//! on a bisection line goes to the upper half. The only closed edges are the
//! outer ones at latitude 90 and longitude 180.

use super::{BBox, GeoError, GeoPoint};

pub const ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";
pub const MAX_PRECISION: usize = 12;

fn char_value(c: u8) -> Option<u8> {
    ALPHABET.iter().position(|&a| a == c).map(|i| i as u8)
}

pub fn encode(p: GeoPoint, precision: usize) -> Result<String, GeoError> {
    if !(1..=MAX_PRECISION).contains(&precision) {
        return Err(GeoError::InvalidArgument(format!(
            "geohash precision must be 1..={MAX_PRECISION}, got {precision}"
        )));
    }
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut out = String::with_capacity(precision);
    let mut even = true;
    for _ in 0..precision {
        let mut v = 0u8;
        for _ in 0..5 {
            v <<= 1;
            if even {
                let mid = (lon_lo + lon_hi) / 2.0;
                if p.lon >= mid {
                    v |= 1;
                    lon_lo = mid;
                } else {
                    lon_hi = mid;
                }
            } else {
                let mid = (lat_lo + lat_hi) / 2.0;
                if p.lat >= mid {
                    v |= 1;
                    lat_lo = mid;
                } else {
                    lat_hi = mid;
                }
            }
            even = !even;
        }
        out.push(ALPHABET[v as usize] as char);
    }
    Ok(out)
}

/// Checks length and alphabet without decoding.
pub fn validate(g: &str) -> Result<(), GeoError> {
    if g.is_empty() {
        return Err(GeoError::Geohash("empty geohash".into()));
    }
    if g.len() > MAX_PRECISION {
        return Err(GeoError::Geohash(format!("geohash `{g}` longer than {MAX_PRECISION}")));
    }
    if let Some(bad) = g.bytes().find(|&c| char_value(c).is_none()) {
        return Err(GeoError::Geohash(format!("invalid character `{}` in `{g}`", bad as char)));
    }
    Ok(())
}

pub fn decode_bbox(g: &str) -> Result<BBox, GeoError> {
    validate(g)?;
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut even = true;
    for c in g.bytes() {
        let v = char_value(c).expect("validated");
        for shift in (0..5).rev() {
            let bit = (v >> shift) & 1 == 1;
            if even {
                let mid = (lon_lo + lon_hi) / 2.0;
                if bit {
                    lon_lo = mid;
                } else {
                    lon_hi = mid;
                }
            } else {
                let mid = (lat_lo + lat_hi) / 2.0;
                if bit {
                    lat_lo = mid;
                } else {
                    lat_hi = mid;
                }
            }
            even = !even;
        }
    }
    Ok(BBox { lat_min: lat_lo, lat_max: lat_hi, lon_min: lon_lo, lon_max: lon_hi })
}

/// Cell size in degrees `(dlat, dlon)` at a precision.
pub fn cell_size_deg(precision: usize) -> (f64, f64) {
    let bits = 5 * precision;
    let lon_bits = bits.div_ceil(2);
    let lat_bits = bits / 2;
    (180.0 / (1u64 << lat_bits) as f64, 360.0 / (1u64 << lon_bits) as f64)
}
