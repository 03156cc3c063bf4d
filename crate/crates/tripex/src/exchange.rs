// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Broken-symmetry exchange energetics and the functional-benchmark table.
//!
//! Sign convention: J = E(high-spin) - E(broken-symmetry).  A negative J
//! puts the high-spin (quartet) manifold lowest, i.e. ferromagnetic
//! alignment of exciton and localized spin; positive J is antiferromagnetic.

use std::fmt::Write as _;
use std::path::Path;

use crate::constants::{ps_from_ns, HBAR_MEV_NS};
use crate::error::{Error, Result};

/// Largest exchange magnitude the crate accepts, meV.  Far beyond any
/// molecular exchange constant; values outside are treated as input errors.
pub const MAX_J_MEV: f64 = 1e3;

/// Valid exciton lifetime range, ns.
pub const LIFETIME_RANGE_NS: (f64, f64) = (0.0, 1e6);

fn check_j(j_mev: f64) -> Result<()> {
    if !j_mev.is_finite() || j_mev.abs() > MAX_J_MEV {
        return Err(Error::InvalidValue {
            name: "j_mev",
            value: j_mev,
            constraint: "must be finite with |J| <= 1e3 meV",
        });
    }
    Ok(())
}

fn check_lifetime(lifetime_ns: f64) -> Result<()> {
    if !lifetime_ns.is_finite()
        || lifetime_ns <= LIFETIME_RANGE_NS.0
        || lifetime_ns > LIFETIME_RANGE_NS.1
    {
        return Err(Error::InvalidValue {
            name: "lifetime_ns",
            value: lifetime_ns,
            constraint: "must be in (0, 1e6] ns",
        });
    }
    Ok(())
}

/// Exchange constant from total energies of the two spin configurations:
/// `J = E_fm - E_afm` (both in meV).
pub fn j_energy_difference(e_fm_mev: f64, e_afm_mev: f64) -> Result<f64> {
    if !e_fm_mev.is_finite() || !e_afm_mev.is_finite() {
        return Err(Error::InvalidInput(
            "configuration energies must be finite".into(),
        ));
    }
    Ok(e_fm_mev - e_afm_mev)
}

/// Spin-projected exchange constant from energies and `<S^2>` values of the
/// high-spin and broken-symmetry solutions:
/// `J = 2 (E_hs - E_bs) / (<S^2>_hs - <S^2>_bs)`.
pub fn j_spin_projected(e_hs_mev: f64, e_bs_mev: f64, s2_hs: f64, s2_bs: f64) -> Result<f64> {
    if ![e_hs_mev, e_bs_mev, s2_hs, s2_bs].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("spin-projection inputs must be finite".into()));
    }
    let denom = s2_hs - s2_bs;
    if denom.abs() < 1e-9 {
        return Err(Error::InvalidValue {
            name: "s2_hs - s2_bs",
            value: denom,
            constraint: "spin projection is undefined for degenerate <S^2>",
        });
    }
    Ok(2.0 * (e_hs_mev - e_bs_mev) / denom)
}

/// Beat period of the exchange splitting, `4 pi hbar / (3 |J|)`, in ns.
///
/// This is the period of `<sz>` oscillation of an initially product-polarized
/// pair: the quartet-doublet gap is `3|J|/2`, so the period is
/// `2 pi hbar / (3|J|/2)`.
pub fn oscillation_period_ns(j_mev: f64) -> Result<f64> {
    check_j(j_mev)?;
    if j_mev == 0.0 {
        return Err(Error::InvalidValue {
            name: "j_mev",
            value: 0.0,
            constraint: "no exchange splitting, oscillation period undefined",
        });
    }
    Ok(4.0 * std::f64::consts::PI * HBAR_MEV_NS / (3.0 * j_mev.abs()))
}

/// Outcome of comparing an exchange splitting against the lifetime
/// broadening `hbar / T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceVerdict {
    pub j_mev: f64,
    pub lifetime_ns: f64,
    /// Lifetime broadening scale `hbar / T`, meV.
    pub hbar_over_lifetime_mev: f64,
    /// `|J| * T / hbar`; exchange beats survive the exciton decay iff > 1.
    pub ratio: f64,
    /// Beat period of the exchange gap, ps (infinite at J = 0).
    pub oscillation_period_ps: f64,
    /// Beats completed within one lifetime, `lifetime / period` (zero at
    /// J = 0).
    pub oscillations_within_lifetime: f64,
    pub survives: bool,
}

/// Compare `|J|` with the lifetime broadening `hbar / lifetime`.
pub fn coherence_check(j_mev: f64, lifetime_ns: f64) -> Result<CoherenceVerdict> {
    check_j(j_mev)?;
    check_lifetime(lifetime_ns)?;
    let hbar_over_lifetime_mev = HBAR_MEV_NS / lifetime_ns;
    let ratio = j_mev.abs() * lifetime_ns / HBAR_MEV_NS;
    let (oscillation_period_ps, oscillations_within_lifetime) = if j_mev == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let period_ps = ps_from_ns(oscillation_period_ns(j_mev)?);
        (period_ps, ps_from_ns(lifetime_ns) / period_ps)
    };
    Ok(CoherenceVerdict {
        j_mev,
        lifetime_ns,
        hbar_over_lifetime_mev,
        ratio,
        oscillation_period_ps,
        oscillations_within_lifetime,
        survives: ratio > 1.0,
    })
}

/// One row of the functional-benchmark table: triplet excitation energy,
/// `<S^2>` diagnostics, and the exchange constant where the
/// broken-symmetry calculation converged.
///
/// Missing values are `None`, never silent zeros; rows without a converged
/// broken-symmetry solution carry neither `s2_afm` nor `j_mev`.
///
/// Records loaded from text remember the verbatim numeric tokens so that a
/// load -> save round trip is byte-stable even for inputs with trailing
/// zeros (`3.770`, `-6.0`); equality compares the parsed values only.
#[derive(Debug, Clone)]
pub struct FunctionalRecord {
    pub functional: String,
    pub e_triplet_ev: f64,
    pub s2_fm: f64,
    pub s2_afm: Option<f64>,
    pub j_mev: Option<f64>,
    /// Verbatim source tokens `[e_triplet_ev, s2_fm, s2_afm, j_mev]`, kept
    /// only by the parser.
    raw_tokens: Option<[String; 4]>,
}

impl PartialEq for FunctionalRecord {
    fn eq(&self, other: &Self) -> bool {
        self.functional == other.functional
            && self.e_triplet_ev == other.e_triplet_ev
            && self.s2_fm == other.s2_fm
            && self.s2_afm == other.s2_afm
            && self.j_mev == other.j_mev
    }
}

impl FunctionalRecord {
    /// Build a record programmatically (no verbatim source tokens).
    pub fn new(
        functional: impl Into<String>,
        e_triplet_ev: f64,
        s2_fm: f64,
        s2_afm: Option<f64>,
        j_mev: Option<f64>,
    ) -> Self {
        FunctionalRecord {
            functional: functional.into(),
            e_triplet_ev,
            s2_fm,
            s2_afm,
            j_mev,
            raw_tokens: None,
        }
    }
    fn validate(&self, path: &str, line: usize) -> Result<()> {
        let fail = |message: String| Error::ParseError {
            path: path.to_string(),
            line,
            message,
        };
        if self.functional.is_empty() {
            return Err(fail("empty functional name".into()));
        }
        if !(0.0..=20.0).contains(&self.e_triplet_ev) {
            return Err(fail(format!(
                "e_triplet_ev = {} outside the sanity band [0, 20] eV",
                self.e_triplet_ev
            )));
        }
        if !(3.0..=4.5).contains(&self.s2_fm) {
            return Err(fail(format!(
                "s2_fm = {} outside the sanity band [3.0, 4.5]",
                self.s2_fm
            )));
        }
        if let Some(s2) = self.s2_afm {
            if !(1.0..=2.5).contains(&s2) {
                return Err(fail(format!(
                    "s2_afm = {s2} outside the sanity band [1.0, 2.5]"
                )));
            }
        }
        if let Some(j) = self.j_mev {
            if !j.is_finite() || j.abs() > MAX_J_MEV {
                return Err(fail(format!("j_mev = {j} outside |J| <= 1e3 meV")));
            }
        }
        Ok(())
    }
}

const TABLE_HEADER: &str = "functional,e_triplet_ev,s2_fm,s2_afm,j_mev";

/// The shipped functional-benchmark fixture, embedded verbatim.
pub const BUNDLED_TABLE1_CSV: &str = include_str!("../data/table1.csv");

/// Parse the embedded fixture (see [`BUNDLED_TABLE1_CSV`]).
pub fn bundled_table1() -> Result<Vec<FunctionalRecord>> {
    parse_functional_table(BUNDLED_TABLE1_CSV, "bundled:table1.csv")
}

/// Load a functional table from CSV (`-` marks a missing value).
///
/// Schema: `functional,e_triplet_ev,s2_fm,s2_afm,j_mev` with exactly that
/// header.  Duplicate functional names and out-of-band values are rejected
/// with the offending 1-based line number.
pub fn load_functional_table(path: impl AsRef<Path>) -> Result<Vec<FunctionalRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_functional_table(&text, &path.display().to_string())
}

/// Parse CSV text; `origin` is used in error messages.
pub fn parse_functional_table(text: &str, origin: &str) -> Result<Vec<FunctionalRecord>> {
    let fail = |line: usize, message: String| Error::ParseError {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == TABLE_HEADER => {}
        Some((_, header)) => {
            return Err(fail(
                1,
                format!("bad header {header:?} (expected {TABLE_HEADER:?})"),
            ))
        }
        None => return Err(fail(1, "empty file".into())),
    }
    let mut records: Vec<FunctionalRecord> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let row = raw.trim_end();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 5 {
            return Err(fail(
                line_no,
                format!("expected 5 comma-separated fields, found {}", fields.len()),
            ));
        }
        let required = |text: &str, name: &str| -> Result<f64> {
            text.trim().parse::<f64>().map_err(|_| {
                fail(line_no, format!("cannot parse {name} from {text:?}"))
            })
        };
        let optional = |text: &str, name: &str| -> Result<Option<f64>> {
            let t = text.trim();
            if t == "-" {
                Ok(None)
            } else {
                required(t, name).map(Some)
            }
        };
        let record = FunctionalRecord {
            functional: fields[0].trim().to_string(),
            e_triplet_ev: required(fields[1], "e_triplet_ev")?,
            s2_fm: required(fields[2], "s2_fm")?,
            s2_afm: optional(fields[3], "s2_afm")?,
            j_mev: optional(fields[4], "j_mev")?,
            raw_tokens: Some([
                fields[1].trim().to_string(),
                fields[2].trim().to_string(),
                fields[3].trim().to_string(),
                fields[4].trim().to_string(),
            ]),
        };
        record.validate(origin, line_no)?;
        if records.iter().any(|r| r.functional == record.functional) {
            return Err(fail(
                line_no,
                format!("duplicate functional name {:?}", record.functional),
            ));
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(fail(1, "table contains no data rows".into()));
    }
    Ok(records)
}

/// Render records as CSV, byte-stable under load -> save round trips.
///
/// Parsed records re-emit their verbatim source tokens; programmatic records
/// use Rust's shortest round-trip float formatting.  Missing values are `-`.
pub fn format_functional_table(records: &[FunctionalRecord]) -> String {
    let mut out = String::new();
    out.push_str(TABLE_HEADER);
    out.push('\n');
    for r in records {
        let opt = |v: Option<f64>| match v {
            Some(x) => format!("{x}"),
            None => "-".to_string(),
        };
        let tokens = match &r.raw_tokens {
            Some(raw) => raw.clone(),
            None => [
                format!("{}", r.e_triplet_ev),
                format!("{}", r.s2_fm),
                opt(r.s2_afm),
                opt(r.j_mev),
            ],
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.functional, tokens[0], tokens[1], tokens[2], tokens[3]
        );
    }
    out
}

/// Write records to a CSV file (see [`format_functional_table`]).
pub fn save_functional_table(path: impl AsRef<Path>, records: &[FunctionalRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_functional_table(records)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Per-functional entry of an [`ExchangeReport`].
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub functional: String,
    pub e_triplet_ev: f64,
    pub s2_fm: f64,
    pub s2_afm: Option<f64>,
    pub j_mev: Option<f64>,
    /// Exchange beat period, ps (`None` when no J is available).
    pub period_ps: Option<f64>,
    pub verdict: Option<CoherenceVerdict>,
}

/// Coherence-survival summary across a functional table at one lifetime.
#[derive(Debug, Clone)]
pub struct ExchangeReport {
    pub lifetime_ns: f64,
    pub hbar_over_lifetime_mev: f64,
    pub rows: Vec<ReportRow>,
    /// Names of rows with no converged broken-symmetry solution.
    pub not_converged: Vec<String>,
    /// Range of converged |J|, meV.
    pub j_abs_range_mev: Option<(f64, f64)>,
    /// Range of beat periods, ps.
    pub period_range_ps: Option<(f64, f64)>,
}

/// Evaluate every record of a table against one exciton lifetime.
pub fn exchange_report(records: &[FunctionalRecord], lifetime_ns: f64) -> Result<ExchangeReport> {
    check_lifetime(lifetime_ns)?;
    if records.is_empty() {
        return Err(Error::InvalidInput("cannot report on an empty table".into()));
    }
    let mut rows = Vec::with_capacity(records.len());
    let mut not_converged = Vec::new();
    let mut j_abs: Vec<f64> = Vec::new();
    let mut periods: Vec<f64> = Vec::new();
    for r in records {
        let (period_ps, verdict) = match r.j_mev {
            Some(j) => {
                let period = ps_from_ns(oscillation_period_ns(j)?);
                let verdict = coherence_check(j, lifetime_ns)?;
                j_abs.push(j.abs());
                periods.push(period);
                (Some(period), Some(verdict))
            }
            None => {
                not_converged.push(r.functional.clone());
                (None, None)
            }
        };
        rows.push(ReportRow {
            functional: r.functional.clone(),
            e_triplet_ev: r.e_triplet_ev,
            s2_fm: r.s2_fm,
            s2_afm: r.s2_afm,
            j_mev: r.j_mev,
            period_ps,
            verdict,
        });
    }
    let min_max = |vals: &[f64]| {
        vals.iter().copied().fold(None, |acc: Option<(f64, f64)>, v| {
            Some(match acc {
                None => (v, v),
                Some((lo, hi)) => (lo.min(v), hi.max(v)),
            })
        })
    };
    Ok(ExchangeReport {
        lifetime_ns,
        hbar_over_lifetime_mev: HBAR_MEV_NS / lifetime_ns,
        rows,
        not_converged,
        j_abs_range_mev: min_max(&j_abs),
        period_range_ps: min_max(&periods),
    })
}
