//! Meshalkin's monotone isomorphism from `B(1/8,1/8,1/8,1/8,1/2)` onto
//! `B(1/4,1/4,1/4,1/4)`.
//!
//! Every `4` is a right parenthesis and every other symbol a left one. A left
//! symbol `a` maps to `a / 2`; a right parenthesis maps to `2` or `3`
//! according to the parity of the symbol it closes. On a finite window only
//! matched positions have a defined image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{rat, Rational};
use crate::rng::{RngStream, SamplingTable};

/// Parity-splitting code with `2m` left symbols `0..2m` and right symbol
/// `2m`. The image alphabet is `0..m+2`: left `a ↦ a/2`, right `↦ m + parity`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityCode {
    pub m: u8,
}

impl Default for ParityCode {
    fn default() -> Self {
        ParityCode { m: 2 }
    }
}

impl ParityCode {
    pub fn new(m: u8) -> Result<Self> {
        if m == 0 || m > 100 {
            return Err(Error::Parameter(format!("parity code needs 1 ≤ m ≤ 100, got {m}")));
        }
        Ok(ParityCode { m })
    }

    pub fn right(&self) -> u8 {
        2 * self.m
    }

    pub fn input_size(&self) -> usize {
        2 * self.m as usize + 1
    }

    pub fn output_size(&self) -> usize {
        self.m as usize + 2
    }

    pub fn is_right(&self, x: u8) -> bool {
        x == self.right()
    }

    pub fn output_is_right(&self, y: u8) -> bool {
        y >= self.m
    }

    /// Input law with half the mass on the right symbol, the rest uniform.
    pub fn input_law(&self) -> Vec<Rational> {
        let mut p = vec![rat(1, 4 * self.m as i64); 2 * self.m as usize];
        p.push(rat(1, 2));
        p
    }

    /// Image law, padded with a zero for the right symbol of the input alphabet.
    pub fn output_law(&self) -> Vec<Rational> {
        let mut q = vec![rat(1, 2 * self.m as i64); self.m as usize];
        q.extend([rat(1, 4), rat(1, 4)]);
        q.resize(self.input_size(), rat(0, 1));
        q
    }
}

/// A window with its parenthesis matching.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParenWindow {
    pub symbols: Vec<u8>,
    /// For each position, the index of its partner, if inside the window.
    pub partner: Vec<Option<usize>>,
}

impl ParenWindow {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn matched(&self, i: usize) -> bool {
        self.partner[i].is_some()
    }

    pub fn fully_matched(&self) -> bool {
        self.partner.iter().all(Option::is_some)
    }

    pub fn unmatched_count(&self) -> usize {
        self.partner.iter().filter(|p| p.is_none()).count()
    }
}

/// Stack matching, left to right, with `is_right` deciding the role of each symbol.
fn match_with(symbols: &[u8], is_right: impl Fn(u8) -> bool) -> Vec<Option<usize>> {
    let mut partner = vec![None; symbols.len()];
    let mut stack = Vec::new();
    for (i, &s) in symbols.iter().enumerate() {
        if is_right(s) {
            if let Some(j) = stack.pop() {
                partner[i] = Some(j);
                partner[j] = Some(i);
            }
        } else {
            stack.push(i);
        }
    }
    partner
}

pub fn match_parens(symbols: &[u8]) -> ParenWindow {
    match_parens_with(symbols, ParityCode::default())
}

pub fn match_parens_with(symbols: &[u8], code: ParityCode) -> ParenWindow {
    ParenWindow { symbols: symbols.to_vec(), partner: match_with(symbols, |s| code.is_right(s)) }
}

fn check_alphabet(symbols: &[u8], size: usize) -> Result<()> {
    match symbols.iter().find(|&&s| s as usize >= size) {
        Some(s) => Err(Error::InvalidAlphabet(format!("symbol {s} outside 0..{size}"))),
        None => Ok(()),
    }
}

/// The forward map; `None` at unmatched positions.
pub fn meshalkin_forward(pw: &ParenWindow) -> Vec<Option<u8>> {
    meshalkin_forward_with(pw, ParityCode::default())
}

pub fn meshalkin_forward_with(pw: &ParenWindow, code: ParityCode) -> Vec<Option<u8>> {
    pw.symbols
        .iter()
        .zip(&pw.partner)
        .map(|(&x, p)| {
            let j = (*p)?;
            Some(if code.is_right(x) { code.m + pw.symbols[j] % 2 } else { x / 2 })
        })
        .collect()
}

/// Matches and maps a raw window.
pub fn forward_window(symbols: &[u8], code: ParityCode) -> Result<Vec<Option<u8>>> {
    check_alphabet(symbols, code.input_size())?;
    Ok(meshalkin_forward_with(&match_parens_with(symbols, code), code))
}

/// The inverse map on an image window, which carries the same matching;
/// `None` at unmatched positions.
pub fn meshalkin_inverse(y: &[u8]) -> Result<Vec<Option<u8>>> {
    meshalkin_inverse_with(y, ParityCode::default())
}

pub fn meshalkin_inverse_with(y: &[u8], code: ParityCode) -> Result<Vec<Option<u8>>> {
    check_alphabet(y, code.output_size())?;
    let partner = match_with(y, |s| code.output_is_right(s));
    Ok(y.iter()
        .zip(&partner)
        .map(|(&v, p)| {
            let j = (*p)?;
            Some(if code.output_is_right(v) { code.right() } else { 2 * v + (y[j] - code.m) })
        })
        .collect())
}

/// Inverse on a window that must be fully matched.
pub fn meshalkin_inverse_full(y: &[u8], code: ParityCode) -> Result<Vec<u8>> {
    meshalkin_inverse_with(y, code)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::InvalidWindow(format!("position {i} has no legal partner"))))
        .collect()
}

/// Settings of [`verify_pushforward`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Total number of input symbols drawn.
    pub samples: usize,
    pub window_len: usize,
    pub inverse_windows: usize,
    pub inverse_window_len: usize,
    /// Window lengths at which the unmatched fraction is reported.
    pub matching_lengths: Vec<usize>,
    pub z_threshold: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 1_000_000,
            window_len: 1000,
            inverse_windows: 10_000,
            inverse_window_len: 64,
            matching_lengths: vec![16, 64, 256, 1024],
            z_threshold: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushforwardReport {
    pub code: ParityCode,
    pub samples: usize,
    pub windows: usize,
    pub defined: usize,
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub expected: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub max_abs_z: f64,
    pub marginals_pass: bool,
    /// Image count of the input's right symbol; zero by construction.
    pub right_symbol_count: usize,
    pub monotone_violations: usize,
    pub pair_max_abs_z: f64,
    pub inverse_windows: usize,
    pub inverse_fully_matched: usize,
    pub inverse_failures: usize,
    pub equivariance_checked: usize,
    pub equivariance_failures: usize,
    /// `(window length, mean unmatched fraction)`.
    pub unmatched_fraction: Vec<(usize, f64)>,
    pub pass: bool,
}

#[derive(Default)]
struct WindowTally {
    counts: Vec<usize>,
    pairs: Vec<usize>,
    pair_total: usize,
    monotone_violations: usize,
    equivariance_checked: usize,
    equivariance_failures: usize,
}

impl WindowTally {
    fn merge(mut self, o: WindowTally) -> WindowTally {
        if self.counts.is_empty() {
            return o;
        }
        if !o.counts.is_empty() {
            self.counts.iter_mut().zip(&o.counts).for_each(|(a, b)| *a += b);
            self.pairs.iter_mut().zip(&o.pairs).for_each(|(a, b)| *a += b);
        }
        self.pair_total += o.pair_total;
        self.monotone_violations += o.monotone_violations;
        self.equivariance_checked += o.equivariance_checked;
        self.equivariance_failures += o.equivariance_failures;
        self
    }
}

fn draw(table: &SamplingTable, len: usize, rng: &mut RngStream) -> Vec<u8> {
    (0..len).map(|_| table.sample(rng) as u8).collect()
}

/// Samples iid windows, maps them forward and checks the image law,
/// monotonicity, equivariance and invertibility.
pub fn verify_pushforward(code: ParityCode, cfg: &VerifyConfig, rng: &RngStream) -> Result<PushforwardReport> {
    if cfg.window_len < 2 || cfg.samples < cfg.window_len {
        return Err(Error::Parameter("need samples ≥ window_len ≥ 2".into()));
    }
    let table = SamplingTable::new(&code.input_law());
    let n_in = code.input_size();
    let windows = cfg.samples / cfg.window_len;
    let tally = (0..windows)
        .into_par_iter()
        .map(|w| {
            let mut r = rng.substream(w as u64);
            let x = draw(&table, cfg.window_len, &mut r);
            let out = meshalkin_forward_with(&match_parens_with(&x, code), code);
            let shifted = meshalkin_forward_with(&match_parens_with(&x[1..], code), code);
            let mut t = WindowTally { counts: vec![0; n_in], pairs: vec![0; n_in * n_in], ..Default::default() };
            for (i, v) in out.iter().enumerate() {
                let Some(v) = *v else { continue };
                t.counts[v as usize] += 1;
                t.monotone_violations += usize::from(v > x[i]);
                if let Some(Some(next)) = out.get(i + 1) {
                    t.pairs[v as usize * n_in + *next as usize] += 1;
                    t.pair_total += 1;
                }
                if i > 0 {
                    if let Some(s) = shifted[i - 1] {
                        t.equivariance_checked += 1;
                        t.equivariance_failures += usize::from(s != v);
                    }
                }
            }
            t
        })
        .reduce(WindowTally::default, WindowTally::merge);

    let expected: Vec<f64> = code.output_law().iter().map(crate::rational::to_f64).collect();
    let defined: usize = tally.counts.iter().sum();
    let frequencies: Vec<f64> = tally.counts.iter().map(|&c| c as f64 / defined as f64).collect();
    let z_scores: Vec<f64> = frequencies
        .iter()
        .zip(&expected)
        .map(|(f, q)| {
            let sd = (q * (1.0 - q) / defined as f64).sqrt();
            if sd == 0.0 {
                0.0
            } else {
                (f - q) / sd
            }
        })
        .collect();
    let max_abs_z = z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let right_symbol_count = tally.counts[code.right() as usize];
    let pair_max_abs_z = (0..n_in * n_in)
        .filter_map(|k| {
            let q = expected[k / n_in] * expected[k % n_in];
            (q > 0.0).then(|| {
                let f = tally.pairs[k] as f64 / tally.pair_total as f64;
                ((f - q) / (q * (1.0 - q) / tally.pair_total as f64).sqrt()).abs()
            })
        })
        .fold(0.0, f64::max);

    let inv_rng = rng.substream(u64::MAX);
    let (inverse_fully_matched, inverse_failures) = (0..cfg.inverse_windows)
        .into_par_iter()
        .map(|w| {
            let mut r = inv_rng.substream(w as u64);
            let x = draw(&table, cfg.inverse_window_len, &mut r);
            let pw = match_parens_with(&x, code);
            let y = meshalkin_forward_with(&pw, code);
            // Unmatched positions keep a placeholder of the right role so
            // the image window has the same matching.
            let y_full: Vec<u8> = y
                .iter()
                .zip(&x)
                .map(|(v, &xi)| v.unwrap_or(if code.is_right(xi) { code.m } else { 0 }))
                .collect();
            let back = meshalkin_inverse_with(&y_full, code).expect("image alphabet");
            let bad = (0..x.len()).any(|i| pw.matched(i) && back[i] != Some(x[i]));
            (usize::from(pw.fully_matched()), usize::from(bad))
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

    let frac_rng = rng.substream(u64::MAX - 1);
    let unmatched_fraction = cfg
        .matching_lengths
        .iter()
        .enumerate()
        .map(|(k, &len)| {
            let mut r = frac_rng.substream(k as u64);
            let reps = (200_000 / len.max(1)).max(1);
            let total: usize = (0..reps).map(|_| match_parens_with(&draw(&table, len, &mut r), code).unmatched_count()).sum();
            (len, total as f64 / (reps * len) as f64)
        })
        .collect();

    let marginals_pass = z_scores.iter().zip(&expected).all(|(z, &q)| q == 0.0 || z.abs() <= cfg.z_threshold);
    let pass = marginals_pass
        && right_symbol_count == 0
        && tally.monotone_violations == 0
        && inverse_failures == 0
        && tally.equivariance_failures == 0;
    Ok(PushforwardReport {
        code,
        samples: windows * cfg.window_len,
        windows,
        defined,
        counts: tally.counts,
        frequencies,
        expected,
        z_scores,
        max_abs_z,
        marginals_pass,
        right_symbol_count,
        monotone_violations: tally.monotone_violations,
        pair_max_abs_z,
        inverse_windows: cfg.inverse_windows,
        inverse_fully_matched,
        inverse_failures,
        equivariance_checked: tally.equivariance_checked,
        equivariance_failures: tally.equivariance_failures,
        unmatched_fraction,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_examples() {
        assert_eq!(match_parens(&[0, 4]).partner, vec![Some(1), Some(0)]);
        assert_eq!(match_parens(&[0, 3, 4, 4]).partner, vec![Some(3), Some(2), Some(1), Some(0)]);
        assert_eq!(match_parens(&[4, 0]).partner, vec![None, None]);
    }

    #[test]
    fn forward_examples() {
        let f = |x: &[u8]| meshalkin_forward(&match_parens(x));
        assert_eq!(f(&[0, 4]), vec![Some(0), Some(2)]);
        assert_eq!(f(&[1, 4]), vec![Some(0), Some(3)]);
        assert_eq!(f(&[0, 3, 4, 4]), vec![Some(0), Some(1), Some(3), Some(2)]);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(meshalkin_inverse(&[0, 2]).unwrap(), vec![Some(0), Some(4)]);
        assert_eq!(meshalkin_inverse(&[0, 1, 3, 2]).unwrap(), vec![Some(0), Some(3), Some(4), Some(4)]);
        assert!(meshalkin_inverse_full(&[2, 0], ParityCode::default()).is_err());
        assert!(meshalkin_inverse(&[4]).is_err());
    }

    #[test]
    fn small_verification_passes() {
        let cfg = VerifyConfig { samples: 50_000, inverse_windows: 500, ..Default::default() };
        let r = verify_pushforward(ParityCode::default(), &cfg, &RngStream::new(7, 0)).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.equivariance_checked > 0);
        assert!(r.unmatched_fraction.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn other_codes_round_trip() {
        let code = ParityCode::new(3).unwrap();
        let x = [5, 0, 6, 6, 3, 2, 6, 6];
        let y: Vec<u8> = forward_window(&x, code).unwrap().into_iter().map(Option::unwrap).collect();
        assert!(y.iter().zip(&x).all(|(a, b)| a <= b));
        assert_eq!(meshalkin_inverse_full(&y, code).unwrap(), x.to_vec());
    }
}
