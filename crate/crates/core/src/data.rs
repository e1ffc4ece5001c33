//! Longitudinal visual field series and the long-format cohort CSV.
//!
//! Rows are `patient,visit,day,location,dls_db` with 1-based visit and
//! location indices; every visit must list every informative location.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, WombleError};

/// One patient's series: `y[t][i]` in dB at visit `t`, location `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VfSeries {
    pub y: Vec<Vec<f64>>,
    pub days: Vec<f64>,
}

impl VfSeries {
    pub fn new(y: Vec<Vec<f64>>, days: Vec<f64>) -> Result<Self> {
        let s = Self { y, days };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WombleError::Data(m));
        if self.y.len() != self.days.len() {
            return bad(format!("{} visits but {} days", self.y.len(), self.days.len()));
        }
        if self.days.is_empty() {
            return bad("series has no visits".into());
        }
        if self.days[0] != 0.0 {
            return bad(format!("first visit must be day 0, found {}", self.days[0]));
        }
        if self.days.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("visit days must be strictly increasing".into());
        }
        let n = self.y[0].len();
        for (t, v) in self.y.iter().enumerate() {
            if v.len() != n {
                return bad(format!("visit {} has {} locations, expected {n}", t + 1, v.len()));
            }
            if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return bad(format!("visit {} has invalid value {x}", t + 1));
            }
        }
        Ok(())
    }

    pub fn n_visits(&self) -> usize {
        self.days.len()
    }

    pub fn n_locations(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    /// `true` where the observation is zero (potentially censored).
    pub fn censored_mask(&self) -> Vec<Vec<bool>> {
        self.y
            .iter()
            .map(|v| v.iter().map(|&x| x == 0.0).collect())
            .collect()
    }

    /// The first `k` visits.
    pub fn truncate(&self, k: usize) -> Self {
        Self {
            y: self.y[..k].to_vec(),
            days: self.days[..k].to_vec(),
        }
    }

    /// Visits on or before `day`.
    pub fn up_to_day(&self, day: f64) -> Self {
        let k = self.days.iter().take_while(|&&d| d <= day).count();
        self.truncate(k)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            y: self
                .y
                .iter()
                .map(|v| v.iter().map(|x| x * factor).collect())
                .collect(),
            days: self.days.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    pub series: VfSeries,
}

/// Parses a cohort; patients keep their order of first appearance.
pub fn read_cohort<R: Read>(reader: R, label: &str) -> Result<Vec<Patient>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let err = |line: usize, msg: String| WombleError::Parse {
        path: label.to_string(),
        line,
        msg,
    };
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let expected = ["patient", "visit", "day", "location", "dls_db"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(err(1, format!("header must be {}", expected.join(","))));
    }
    // patient -> visit -> (day, first line, location -> value)
    type Visit = (f64, usize, BTreeMap<usize, f64>);
    let mut order: Vec<String> = Vec::new();
    let mut raw: BTreeMap<String, BTreeMap<usize, Visit>> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        let patient = rec[0].to_string();
        if patient.is_empty() {
            return Err(err(line, "empty patient id".into()));
        }
        let visit: usize = rec[1]
            .parse()
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| err(line, format!("bad visit '{}'", &rec[1])))?;
        let day: f64 = rec[2]
            .parse()
            .ok()
            .filter(|d: &f64| d.is_finite() && *d >= 0.0)
            .ok_or_else(|| err(line, format!("bad day '{}'", &rec[2])))?;
        let loc: usize = rec[3]
            .parse()
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| err(line, format!("bad location '{}'", &rec[3])))?;
        let value: f64 = rec[4]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| err(line, format!("bad dls_db '{}'", &rec[4])))?;
        if !raw.contains_key(&patient) {
            order.push(patient.clone());
        }
        let visits = raw.entry(patient).or_default();
        let entry = visits.entry(visit).or_insert((day, line, BTreeMap::new()));
        if entry.0 != day {
            return Err(err(line, format!("visit {visit} has conflicting days {} and {day}", entry.0)));
        }
        if entry.2.insert(loc, value).is_some() {
            return Err(err(line, format!("duplicate location {loc} in visit {visit}")));
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let visits = &raw[&id];
        let mut y = Vec::new();
        let mut days = Vec::new();
        let mut n = None;
        for (expect, (&v, (day, line, locs))) in (1..).zip(visits) {
            if v != expect {
                return Err(err(*line, format!("patient {id}: visits must be numbered 1..nu, missing {expect}")));
            }
            let count = locs.len();
            if locs.keys().copied().ne(1..=count) {
                return Err(err(*line, format!("patient {id} visit {v}: locations must be 1..{count}")));
            }
            if *n.get_or_insert(count) != count {
                return Err(err(*line, format!("patient {id} visit {v}: {count} locations, expected {}", n.unwrap())));
            }
            y.push(locs.values().copied().collect());
            days.push(*day);
        }
        let first_line = visits.values().next().map_or(2, |v| v.1);
        let series = VfSeries::new(y, days).map_err(|e| err(first_line, format!("patient {id}: {e}")))?;
        out.push(Patient { id, series });
    }
    Ok(out)
}

pub fn write_cohort<W: Write>(patients: &[Patient], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| WombleError::Data(e.to_string());
    w.write_record(["patient", "visit", "day", "location", "dls_db"]).map_err(io)?;
    for p in patients {
        for (t, (v, d)) in p.series.y.iter().zip(&p.series.days).enumerate() {
            for (i, x) in v.iter().enumerate() {
                w.write_record([
                    p.id.clone(),
                    (t + 1).to_string(),
                    format!("{d}"),
                    (i + 1).to_string(),
                    format!("{x}"),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| WombleError::Data(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohort_roundtrip() {
        let p = vec![
            Patient {
                id: "a".into(),
                series: VfSeries::new(vec![vec![1.5, 0.0], vec![2.25, 3.0]], vec![0.0, 90.0]).unwrap(),
            },
            Patient {
                id: "b".into(),
                series: VfSeries::new(vec![vec![0.0, 0.0]], vec![0.0]).unwrap(),
            },
        ];
        let mut buf = Vec::new();
        write_cohort(&p, &mut buf).unwrap();
        let back = read_cohort(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, p);
        let mut buf2 = Vec::new();
        write_cohort(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn corrupt_row_names_line() {
        let csv = "patient,visit,day,location,dls_db\na,1,0,1,3\na,1,0,2,oops\n";
        match read_cohort(csv.as_bytes(), "x.csv") {
            Err(WombleError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invariants_enforced() {
        assert!(VfSeries::new(vec![vec![1.0]], vec![3.0]).is_err());
        assert!(VfSeries::new(vec![vec![1.0], vec![1.0]], vec![0.0, 0.0]).is_err());
        assert!(VfSeries::new(vec![vec![-1.0]], vec![0.0]).is_err());
        let s = VfSeries::new(vec![vec![0.0, 4.0]], vec![0.0]).unwrap();
        assert_eq!(s.censored_mask(), vec![vec![true, false]]);
    }
}
