//! CSV layout shared by populations and samples: `stratum,weight,y,x,r`, with an
//! empty `x` field for missing items.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{SampleUnit, Stratum, StratifiedPopulation, StratumDesign, SurveySample};
use crate::error::{Error, Result, RowIssue};

const HEADER: [&str; 5] = ["stratum", "weight", "y", "x", "r"];

pub fn write_sample_csv<W: Write>(sample: &SurveySample, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for u in sample.units() {
        let x = u.x.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            u.stratum.to_string(),
            u.weight.to_string(),
            u.y.to_string(),
            x,
            u.r().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Populations are written as a census: weight 1, nothing missing.
pub fn write_population_csv<W: Write>(pop: &StratifiedPopulation, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for u in pop.units() {
        w.write_record([u.stratum.to_string(), "1".into(), u.y.to_string(), u.x.to_string(), "0".into()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sample, collecting every schema violation before failing.
///
/// `N_s` is recovered as `weight × n_s`, so weights must be constant within a
/// stratum.
pub fn read_sample_csv<R: Read>(reader: R) -> Result<SurveySample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 5];
    let mut issues = Vec::new();
    for (k, name) in HEADER.iter().enumerate() {
        match headers.iter().position(|h| h.trim() == *name) {
            Some(i) => col[k] = i,
            None => issues.push(RowIssue {
                row: 0,
                message: format!("missing column {name:?}"),
            }),
        }
    }
    if !issues.is_empty() {
        return Err(Error::Schema(issues));
    }

    let mut units = Vec::new();
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                issues.push(RowIssue { row, message: e.to_string() });
                continue;
            }
        };
        let field = |k: usize| record.get(col[k]).unwrap_or("").trim();
        let mut bad = |message: String| issues.push(RowIssue { row, message });

        let stratum = field(0).parse::<Stratum>();
        let weight = field(1).parse::<f64>();
        let y = field(2).parse::<u8>();
        let x = match field(3) {
            "" => Ok(None),
            s => s.parse::<u8>().map(Some),
        };
        let r = field(4).parse::<u8>();

        let stratum = stratum.map_err(|_| bad(format!("stratum {:?} is not a nonnegative integer", field(0))));
        let weight = match weight {
            Ok(w) if w.is_finite() && w >= 1.0 => Ok(w),
            Ok(w) => Err(bad(format!("weight {w} must be finite and at least 1"))),
            Err(_) => Err(bad(format!("weight {:?} is not a number", field(1)))),
        };
        let y = match y {
            Ok(y @ 1..=3) => Ok(y),
            _ => Err(bad(format!("y {:?} is not in {{1, 2, 3}}", field(2)))),
        };
        let x = match x {
            Ok(None) => Ok(None),
            Ok(Some(x @ 0..=1)) => Ok(Some(x)),
            _ => Err(bad(format!("x {:?} is not 0, 1, or empty", field(3)))),
        };
        let r = match r {
            Ok(r @ 0..=1) => Ok(r),
            _ => Err(bad(format!("r {:?} is not 0 or 1", field(4)))),
        };
        if let (Ok(stratum), Ok(weight), Ok(y), Ok(x), Ok(r)) = (stratum, weight, y, x, r) {
            if (r == 1) != x.is_none() {
                bad(format!("r = {r} is inconsistent with x {:?}", field(3)));
                continue;
            }
            units.push(SampleUnit { stratum, weight, y, x });
            rows.push(row);
        }
    }

    let mut first_weight: BTreeMap<Stratum, f64> = BTreeMap::new();
    let mut draws: BTreeMap<Stratum, usize> = BTreeMap::new();
    for (u, &row) in units.iter().zip(&rows) {
        let w0 = *first_weight.entry(u.stratum).or_insert(u.weight);
        if (u.weight - w0).abs() > 1e-9 * w0 {
            issues.push(RowIssue {
                row,
                message: format!(
                    "weight {} differs from {w0} used elsewhere in stratum {}",
                    u.weight, u.stratum
                ),
            });
        }
        *draws.entry(u.stratum).or_insert(0) += 1;
    }
    if units.is_empty() && issues.is_empty() {
        issues.push(RowIssue {
            row: 0,
            message: "no data rows".into(),
        });
    }
    if !issues.is_empty() {
        issues.sort_by_key(|i| i.row);
        return Err(Error::Schema(issues));
    }

    let design: BTreeMap<Stratum, StratumDesign> = draws
        .into_iter()
        .map(|(s, n)| {
            let mut big_n = first_weight[&s] * n as f64;
            // Weights printed as N_s/n_s recover an integral N_s up to rounding.
            if (big_n - big_n.round()).abs() <= 1e-6 * big_n {
                big_n = big_n.round();
            }
            (
                s,
                StratumDesign {
                    population_size: big_n,
                    draws: n,
                },
            )
        })
        .collect();
    // Re-derive weights from the design so the N_s/n_s identity holds exactly.
    for u in &mut units {
        u.weight = design[&u.stratum].weight();
    }
    SurveySample::new(units, design)
}
