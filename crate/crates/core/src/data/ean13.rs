use crate::error::{Error, Result};

/// Left-half odd-parity ("L") patterns; `1` is a bar.
const L_CODES: [u8; 10] = [
    0b0001101, 0b0011001, 0b0010011, 0b0111101, 0b0100011, 0b0110001, 0b0101111, 0b0111011,
    0b0110111, 0b0001011,
];
/// Left-half even-parity ("G") patterns.
const G_CODES: [u8; 10] = [
    0b0100111, 0b0110011, 0b0011011, 0b0100001, 0b0011101, 0b0111001, 0b0000101, 0b0010001,
    0b0001001, 0b0010111,
];
/// Right-half ("R") patterns.
const R_CODES: [u8; 10] = [
    0b1110010, 0b1100110, 0b1101100, 0b1000010, 0b1011100, 0b1001110, 0b1010000, 0b1000100,
    0b1001000, 0b1110100,
];
/// Parity of the six left digits, selected by the leading digit; bit set = G.
const PARITY: [u8; 10] = [
    0b000000, 0b001011, 0b001101, 0b001110, 0b010011, 0b011001, 0b011100, 0b010101, 0b010110,
    0b011010,
];

pub const EAN13_MODULES: usize = 95;

fn digits(s: &str, len: usize) -> Result<Vec<u8>> {
    if s.len() != len {
        return Err(Error::Ean13(format!("expected {len} digits, got {:?}", s)));
    }
    s.bytes()
        .map(|b| {
            if b.is_ascii_digit() {
                Ok(b - b'0')
            } else {
                Err(Error::Ean13(format!("non-digit {:?} in {s:?}", b as char)))
            }
        })
        .collect()
}

/// Check digit for the first twelve digits (weights 1, 3, 1, 3, ...).
pub fn ean13_check_digit(first12: &str) -> Result<u8> {
    let d = digits(first12, 12)?;
    let sum: u32 = d
        .iter()
        .enumerate()
        .map(|(i, &v)| v as u32 * if i % 2 == 0 { 1 } else { 3 })
        .sum();
    Ok(((10 - sum % 10) % 10) as u8)
}

/// 95 modules (`true` = bar): guard 101, six left digits, guard 01010, six
/// right digits, guard 101.
pub fn encode_ean13(code: &str) -> Result<Vec<bool>> {
    let d = digits(code, 13)?;
    let check = ean13_check_digit(&code[..12])?;
    if d[12] != check {
        return Err(Error::Ean13(format!(
            "check digit of {code:?} should be {check}, found {}",
            d[12]
        )));
    }
    let mut out = Vec::with_capacity(EAN13_MODULES);
    let push = |out: &mut Vec<bool>, pattern: u8, width: usize| {
        for bit in (0..width).rev() {
            out.push(pattern >> bit & 1 == 1);
        }
    };
    push(&mut out, 0b101, 3);
    let parity = PARITY[d[0] as usize];
    for (i, &digit) in d[1..7].iter().enumerate() {
        let even = parity >> (5 - i) & 1 == 1;
        let code = if even { G_CODES } else { L_CODES }[digit as usize];
        push(&mut out, code, 7);
    }
    push(&mut out, 0b01010, 5);
    for &digit in &d[7..13] {
        push(&mut out, R_CODES[digit as usize], 7);
    }
    push(&mut out, 0b101, 3);
    debug_assert_eq!(out.len(), EAN13_MODULES);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: weights counted from the right end (3 on the
    /// digit next to the check digit).
    fn oracle_check(first12: &str) -> u8 {
        let sum: u32 = first12
            .bytes()
            .rev()
            .enumerate()
            .map(|(i, b)| (b - b'0') as u32 * if i % 2 == 0 { 3 } else { 1 })
            .sum();
        ((10 - sum % 10) % 10) as u8
    }

    #[test]
    fn check_digit_examples() {
        assert_eq!(oracle_check("590123412345"), 7);
        assert_eq!(ean13_check_digit("590123412345").unwrap(), 7);
        for s in ["400638133393", "000000000000", "978030640615", "123456789012"] {
            assert_eq!(ean13_check_digit(s).unwrap(), oracle_check(s));
        }
    }

    #[test]
    fn accept_and_reject() {
        assert!(encode_ean13("4006381333931").is_ok());
        assert!(encode_ean13("4006381333932").is_err());
        assert!(encode_ean13("400638133393").is_err());
        assert!(encode_ean13("40063813339x1").is_err());
    }

    #[test]
    fn structure() {
        let m = encode_ean13("5901234123457").unwrap();
        assert_eq!(m.len(), 95);
        assert_eq!(&m[..3], &[true, false, true]);
        assert_eq!(&m[92..], &[true, false, true]);
        assert_eq!(&m[45..50], &[false, true, false, true, false]);
        // two bars per digit, two per guard
        let bars = m.windows(2).filter(|w| w[1] && !w[0]).count() + m[0] as usize;
        assert_eq!(bars, 2 + 12 * 2 + 2 + 2);
    }

    #[test]
    fn left_half_parity_follows_leading_digit() {
        // leading 0 => all L codes, like UPC-A
        let m = encode_ean13("0012345678905").unwrap();
        let first = &m[3..10];
        let expect: Vec<bool> = (0..7).rev().map(|b| L_CODES[0] >> b & 1 == 1).collect();
        assert_eq!(first, expect.as_slice());
    }
}
