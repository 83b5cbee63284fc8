//! CSV datasets: one row per period with columns `time, z, y` and either `p`
//! (binary design) or `mean, var` (continuous design). Header names are
//! case-insensitive and column order is free.

use std::io::Read;
use std::path::Path;

use crate::design::{AssignmentDesign, TreatmentPath, DEFAULT_OVERLAP_FLOOR, DEFAULT_VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::harness::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub enum DesignColumns {
    None,
    Probability(Vec<f64>),
    Moments { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub design: DesignColumns,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn path(&self) -> TreatmentPath {
        TreatmentPath::new(self.z.clone())
    }

    /// Design carried by the file, if any.
    pub fn design(&self, floor: Option<f64>) -> Result<Option<AssignmentDesign>> {
        match &self.design {
            DesignColumns::None => Ok(None),
            DesignColumns::Probability(p) => {
                AssignmentDesign::binary(p.clone(), floor.unwrap_or(DEFAULT_OVERLAP_FLOOR)).map(Some)
            }
            DesignColumns::Moments { mean, var } => AssignmentDesign::continuous(
                mean.clone(),
                var.clone(),
                None,
                floor.unwrap_or(DEFAULT_VARIANCE_FLOOR),
            )
            .map(Some),
        }
    }

    /// Constant probability when every row has the same `p`.
    pub fn constant_probability(&self) -> Option<f64> {
        match &self.design {
            DesignColumns::Probability(p) if p.iter().all(|&x| x == p[0]) => Some(p[0]),
            _ => None,
        }
    }

    /// Checks `z ∈ {0, 1}` row by row.
    pub fn check_binary(&self) -> Result<()> {
        match self.z.iter().position(|&z| z != 0.0 && z != 1.0) {
            Some(i) => Err(Error::Dataset { row: i + 1, message: format!("z = {} is not 0 or 1", self.z[i]) }),
            None => Ok(()),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["time", "z", "y"];
        match &self.design {
            DesignColumns::None => {}
            DesignColumns::Probability(_) => header.push("p"),
            DesignColumns::Moments { .. } => header.extend(["mean", "var"]),
        }
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![(i + 1).to_string(), fmt_f64(self.z[i]), fmt_f64(self.y[i])];
            match &self.design {
                DesignColumns::None => {}
                DesignColumns::Probability(p) => row.push(fmt_f64(p[i])),
                DesignColumns::Moments { mean, var } => {
                    row.push(fmt_f64(mean[i]));
                    row.push(fmt_f64(var[i]));
                }
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn parse_dataset(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Dataset { row: 0, message: format!("cannot open {}: {e}", path.display()) })?;
    read_dataset(f)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::Dataset { row: 0, message: format!("header lacks a '{name}' column") })
    };
    let (ct, cz, cy) = (need("time")?, need("z")?, need("y")?);
    let cp = col("p");
    let (cm, cv) = (col("mean"), col("var"));
    if cp.is_some() && (cm.is_some() || cv.is_some()) {
        return Err(Error::Dataset { row: 0, message: "give either 'p' or 'mean'/'var', not both".into() });
    }
    if cm.is_some() != cv.is_some() {
        return Err(Error::Dataset { row: 0, message: "'mean' and 'var' must appear together".into() });
    }
    let (mut z, mut y, mut p, mut mean, mut var) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Dataset { row, message: e.to_string() })?;
        let field = |c: usize, name: &str| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            if s.is_empty() {
                return Err(Error::Dataset { row, message: format!("missing {name}") });
            }
            let v: f64 = s.parse().map_err(|_| Error::Dataset { row, message: format!("cannot parse {name} '{s}'") })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Dataset { row, message: format!("{name} is not finite") })
            }
        };
        let t_raw = rec.get(ct).unwrap_or("");
        let t: usize = t_raw
            .parse()
            .map_err(|_| Error::Dataset { row, message: format!("cannot parse time '{t_raw}'") })?;
        if t != row {
            let message = if t < row { format!("duplicate or out-of-order time {t}") } else { format!("gap before time {t}") };
            return Err(Error::Dataset { row, message });
        }
        z.push(field(cz, "z")?);
        y.push(field(cy, "y")?);
        if let Some(c) = cp {
            p.push(field(c, "p")?);
        }
        if let (Some(a), Some(b)) = (cm, cv) {
            mean.push(field(a, "mean")?);
            var.push(field(b, "var")?);
        }
    }
    if y.is_empty() {
        return Err(Error::Dataset { row: 0, message: "no data rows".into() });
    }
    let design = if cp.is_some() {
        DesignColumns::Probability(p)
    } else if cm.is_some() {
        DesignColumns::Moments { mean, var }
    } else {
        DesignColumns::None
    };
    let ds = Dataset { z, y, design };
    if matches!(ds.design, DesignColumns::Probability(_)) {
        ds.check_binary()?;
    }
    Ok(ds)
}
