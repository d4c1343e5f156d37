//! Text formats for probability vectors.
//!
//! A list is a comma- or whitespace-separated sequence of terms. A term is
//! a decimal (`0.125`), a fraction (`1/12`) or either followed by a
//! repetition suffix `×n`, `xn` or `*n`, so `1/8,1/8,1/12×9` has 11 entries.

use crate::error::{Error, Result};
use crate::topk::CondDist;

/// Largest vector [`parse_list`] will build.
pub const MAX_ENTRIES: usize = 1 << 16;

/// Sums within this distance of 1 are renormalized silently.
pub const ETA_SUM_TOL: f64 = 1e-9;

fn parse_scalar(term: &str) -> Result<f64> {
    let bad = || Error::Parse(format!("bad number {term:?}"));
    let v = match term.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| bad())?;
            let den: f64 = den.trim().parse().map_err(|_| bad())?;
            if den == 0.0 {
                return Err(Error::Parse(format!("zero denominator in {term:?}")));
            }
            num / den
        }
        None => term.parse().map_err(|_| bad())?,
    };
    if !v.is_finite() {
        return Err(Error::Parse(format!("{term:?} is not finite")));
    }
    Ok(v)
}

fn split_repeat(term: &str) -> Result<(&str, usize)> {
    let Some(pos) = term.find(['×', 'x', 'X', '*']) else {
        return Ok((term, 1));
    };
    let sep_len = term[pos..].chars().next().map_or(1, char::len_utf8);
    let count = &term[pos + sep_len..];
    let n: usize = count
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad repetition count in {term:?}")))?;
    if n == 0 {
        return Err(Error::Parse(format!("zero repetition in {term:?}")));
    }
    Ok((&term[..pos], n))
}

/// Parses a list of reals in the format described at the module level.
pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for term in text.split(|c: char| c == ',' || c.is_whitespace()) {
        if term.is_empty() {
            continue;
        }
        let (value, n) = split_repeat(term)?;
        let v = parse_scalar(value.trim())?;
        if out.len() + n > MAX_ENTRIES {
            return Err(Error::Parse(format!("more than {MAX_ENTRIES} entries")));
        }
        out.extend(std::iter::repeat_n(v, n));
    }
    if out.is_empty() {
        return Err(Error::Parse("empty list".into()));
    }
    Ok(out)
}

/// Parses a conditional distribution. Sums within [`ETA_SUM_TOL`] of 1 are
/// renormalized; others are rejected unless `normalize` is set.
pub fn parse_eta(text: &str, normalize: bool) -> Result<CondDist> {
    let probs = parse_list(text)?;
    if normalize {
        let sum: f64 = probs.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::NotNormalized(sum));
        }
        CondDist::renormalized(probs, f64::INFINITY)
    } else {
        CondDist::renormalized(probs, ETA_SUM_TOL)
    }
}
