//! Dataset representation, variable roles and validation.
//!
//! A [`Dataset`] holds one row per unit. Treatment and mediator are binary,
//! the outcome is real valued (0/1 for the binomial family), and covariates
//! are real columns. Post-treatment covariates are stored once per unit and
//! read as the value under the treatment the unit actually received.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the columns that play each role in the analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableRoles {
    pub treatment: String,
    pub mediator: String,
    pub outcome: String,
    /// Pretreatment covariates (the union set when post-treatment adjustment is used).
    #[serde(default)]
    pub pretreatment: Vec<String>,
    /// Post-treatment covariates, possibly empty.
    #[serde(default)]
    pub posttreatment: Vec<String>,
    #[serde(default)]
    pub unit_id: Option<String>,
}

impl VariableRoles {
    pub fn new(treatment: &str, mediator: &str, outcome: &str) -> Self {
        Self {
            treatment: treatment.to_string(),
            mediator: mediator.to_string(),
            outcome: outcome.to_string(),
            pretreatment: Vec::new(),
            posttreatment: Vec::new(),
            unit_id: None,
        }
    }

    pub fn with_pretreatment<S: AsRef<str>>(mut self, cols: &[S]) -> Self {
        self.pretreatment = cols.iter().map(|c| c.as_ref().to_string()).collect();
        self
    }

    pub fn with_posttreatment<S: AsRef<str>>(mut self, cols: &[S]) -> Self {
        self.posttreatment = cols.iter().map(|c| c.as_ref().to_string()).collect();
        self
    }

    pub fn with_unit_id(mut self, col: &str) -> Self {
        self.unit_id = Some(col.to_string());
        self
    }

    /// All role columns in a fixed order: A, Z, Y, X..., L..., id.
    pub fn all_columns(&self) -> Vec<&str> {
        let mut cols = vec![
            self.treatment.as_str(),
            self.mediator.as_str(),
            self.outcome.as_str(),
        ];
        cols.extend(self.pretreatment.iter().map(String::as_str));
        cols.extend(self.posttreatment.iter().map(String::as_str));
        if let Some(id) = &self.unit_id {
            cols.push(id.as_str());
        }
        cols
    }

    /// Checks that role names are distinct, and that pretreatment covariates
    /// are only omitted when treatment is randomized.
    pub fn check(&self, randomized: bool) -> Result<()> {
        let mut seen = HashSet::new();
        for c in self.all_columns() {
            if c.is_empty() {
                return Err(Error::Config("empty column name in roles".into()));
            }
            if !seen.insert(c) {
                return Err(Error::Config(format!("column `{c}` assigned to more than one role")));
            }
        }
        if self.pretreatment.is_empty() && !randomized {
            return Err(Error::Config(
                "no pretreatment covariates given; they may be omitted only when treatment is randomized"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Rectangular, validated table of units.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub treatment: Vec<u8>,
    pub mediator: Vec<u8>,
    pub outcome: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// Column-major pretreatment covariates, one `Vec` per name.
    pub covariates: Vec<Vec<f64>>,
    pub post_names: Vec<String>,
    pub post: Vec<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset from in-memory columns. Ids default to `1..=n`.
    pub fn from_columns(
        treatment: Vec<u8>,
        mediator: Vec<u8>,
        outcome: Vec<f64>,
        covariates: Vec<(String, Vec<f64>)>,
        post: Vec<(String, Vec<f64>)>,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = treatment.len();
        if mediator.len() != n || outcome.len() != n {
            return Err(Error::Dimension("role columns differ in length".into()));
        }
        if covariates.iter().chain(post.iter()).any(|(_, c)| c.len() != n) {
            return Err(Error::Dimension("covariate column length differs from treatment".into()));
        }
        if let Some(i) = treatment.iter().position(|&a| a > 1) {
            return Err(Error::NotBinary {
                role: "treatment",
                column: "treatment".into(),
                row: i + 1,
                value: treatment[i].to_string(),
            });
        }
        if let Some(i) = mediator.iter().position(|&z| z > 1) {
            return Err(Error::NotBinary {
                role: "mediator",
                column: "mediator".into(),
                row: i + 1,
                value: mediator[i].to_string(),
            });
        }
        let ids = match ids {
            Some(ids) if ids.len() != n => {
                return Err(Error::Dimension("id column length differs".into()))
            }
            Some(ids) => ids,
            None => (1..=n).map(|i| i.to_string()).collect(),
        };
        let (covariate_names, covariates) = covariates.into_iter().unzip();
        let (post_names, post) = post.into_iter().unzip();
        Ok(Self {
            ids,
            treatment,
            mediator,
            outcome,
            covariate_names,
            covariates,
            post_names,
            post,
        })
    }

    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    /// Looks a covariate up by name among pretreatment and post-treatment columns.
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .map(|i| self.covariates[i].as_slice())
            .or_else(|| {
                self.post_names
                    .iter()
                    .position(|c| c == name)
                    .map(|i| self.post[i].as_slice())
            })
    }

    /// Indices of units in treatment arm `arm`.
    pub fn arm(&self, arm: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.treatment[i] == arm).collect()
    }

    pub fn count_arm(&self, arm: u8) -> usize {
        self.treatment.iter().filter(|&&a| a == arm).count()
    }

    /// Sample proportion of treated units.
    pub fn marginal_treated(&self) -> f64 {
        self.count_arm(1) as f64 / self.len() as f64
    }

    /// New dataset holding the units at `idx`, in that order (repeats allowed).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let pick_f = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            mediator: idx.iter().map(|&i| self.mediator[i]).collect(),
            outcome: pick_f(&self.outcome),
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.iter().map(pick_f).collect(),
            post_names: self.post_names.clone(),
            post: self.post.iter().map(pick_f).collect(),
        }
    }

    /// Writes the role columns back out as CSV. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, roles: &VariableRoles, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = vec![&roles.treatment, &roles.mediator, &roles.outcome];
        header.extend(self.covariate_names.iter().map(String::as_str));
        header.extend(self.post_names.iter().map(String::as_str));
        let id_col = roles.unit_id.as_deref().unwrap_or("id");
        header.push(id_col);
        w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.treatment[i].to_string(),
                self.mediator[i].to_string(),
                self.outcome[i].to_string(),
            ];
            rec.extend(self.covariates.iter().map(|c| c[i].to_string()));
            rec.extend(self.post.iter().map(|c| c[i].to_string()));
            rec.push(self.ids[i].clone());
            w.write_record(&rec).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

fn parse_number(column: &str, row: usize, raw: &str) -> Result<f64> {
    let s = raw.trim();
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumeric {
            column: column.to_string(),
            row,
            value: raw.to_string(),
        }),
    }
}

fn parse_binary(role: &'static str, column: &str, row: usize, raw: &str) -> Result<u8> {
    let v = parse_number(column, row, raw)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::NotBinary {
            role,
            column: column.to_string(),
            row,
            value: raw.to_string(),
        })
    }
}

/// Reads a CSV file and extracts the role columns.
pub fn load_csv<P: AsRef<Path>>(path: P, roles: &VariableRoles) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, roles, &path.display().to_string())
}

/// Same as [`load_csv`] over any reader; `label` names the source in errors.
pub fn read_csv<R: Read>(reader: R, roles: &VariableRoles, label: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if header.is_empty() {
        return Err(Error::EmptyFile(label.to_string()));
    }
    let index: BTreeMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let locate = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let a_col = locate(&roles.treatment)?;
    let z_col = locate(&roles.mediator)?;
    let y_col = locate(&roles.outcome)?;
    let x_cols = roles
        .pretreatment
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;
    let l_cols = roles
        .posttreatment
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;
    let id_col = roles.unit_id.as_deref().map(locate).transpose()?;

    let mut treatment = Vec::new();
    let mut mediator = Vec::new();
    let mut outcome = Vec::new();
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); x_cols.len()];
    let mut ls: Vec<Vec<f64>> = vec![Vec::new(); l_cols.len()];
    let mut ids = Vec::new();

    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let row = r + 1;
        let cell = |c: usize| record.get(c).unwrap_or("");
        treatment.push(parse_binary("treatment", &roles.treatment, row, cell(a_col))?);
        mediator.push(parse_binary("mediator", &roles.mediator, row, cell(z_col))?);
        outcome.push(parse_number(&roles.outcome, row, cell(y_col))?);
        for (k, &c) in x_cols.iter().enumerate() {
            xs[k].push(parse_number(&roles.pretreatment[k], row, cell(c))?);
        }
        for (k, &c) in l_cols.iter().enumerate() {
            ls[k].push(parse_number(&roles.posttreatment[k], row, cell(c))?);
        }
        match id_col {
            Some(c) => {
                let id = cell(c).trim();
                if id.is_empty() {
                    return Err(Error::NonNumeric {
                        column: roles.unit_id.clone().unwrap_or_default(),
                        row,
                        value: String::new(),
                    });
                }
                ids.push(id.to_string());
            }
            None => ids.push(row.to_string()),
        }
    }
    if treatment.is_empty() {
        return Err(Error::EmptyFile(label.to_string()));
    }
    Ok(Dataset {
        ids,
        treatment,
        mediator,
        outcome,
        covariate_names: roles.pretreatment.clone(),
        covariates: xs,
        post_names: roles.posttreatment.clone(),
        post: ls,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    /// An arm with no units (treatment positivity).
    EmptyArm { arm: u8 },
    /// No units in arm `arm` have mediator value `mediator` (mediator positivity).
    EmptyCell { arm: u8, mediator: u8 },
    ConstantColumn { column: String },
    DuplicateId { id: String, rows: Vec<usize> },
}

impl ValidationIssue {
    pub fn describe(&self) -> String {
        match self {
            ValidationIssue::EmptyArm { arm } => {
                format!("treatment arm A={arm} is empty (nonzero treatment probability violated)")
            }
            ValidationIssue::EmptyCell { arm, mediator } => format!(
                "empty cell (A={arm}, Z={mediator}) (nonzero mediator probability violated)"
            ),
            ValidationIssue::ConstantColumn { column } => format!("constant column `{column}`"),
            ValidationIssue::DuplicateId { id, rows } => {
                format!("duplicate id {id:?} at rows {rows:?}")
            }
        }
    }
}

/// Problems found by [`validate`]. Nothing is dropped; callers decide.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n: usize,
    pub cell_counts: [[usize; 2]; 2],
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    /// First issue that makes estimation impossible, if any.
    pub fn fatal(&self) -> Option<&ValidationIssue> {
        self.issues.iter().find(|i| {
            matches!(
                i,
                ValidationIssue::EmptyArm { .. }
                    | ValidationIssue::EmptyCell { .. }
                    | ValidationIssue::DuplicateId { .. }
            )
        })
    }
}

/// Reports empty arm-by-mediator cells, constant covariates and duplicate ids.
pub fn validate(dataset: &Dataset, roles: &VariableRoles) -> ValidationReport {
    let mut report = ValidationReport {
        n: dataset.len(),
        ..Default::default()
    };
    for i in 0..dataset.len() {
        report.cell_counts[dataset.treatment[i] as usize][dataset.mediator[i] as usize] += 1;
    }
    for arm in 0..2u8 {
        let arm_n: usize = report.cell_counts[arm as usize].iter().sum();
        if arm_n == 0 {
            report.issues.push(ValidationIssue::EmptyArm { arm });
            continue;
        }
        for z in 0..2u8 {
            if report.cell_counts[arm as usize][z as usize] == 0 {
                report.issues.push(ValidationIssue::EmptyCell { arm, mediator: z });
            }
        }
    }
    let covs = dataset
        .covariate_names
        .iter()
        .zip(&dataset.covariates)
        .chain(dataset.post_names.iter().zip(&dataset.post));
    for (name, col) in covs {
        if let Some(first) = col.first() {
            if col.iter().all(|v| v == first) {
                report.issues.push(ValidationIssue::ConstantColumn {
                    column: name.clone(),
                });
            }
        }
    }
    if roles.unit_id.is_some() {
        let mut rows: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, id) in dataset.ids.iter().enumerate() {
            rows.entry(id.as_str()).or_default().push(i + 1);
        }
        for (id, rows) in rows.into_iter().filter(|(_, r)| r.len() > 1) {
            report.issues.push(ValidationIssue::DuplicateId {
                id: id.to_string(),
                rows,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles() -> VariableRoles {
        VariableRoles::new("A", "Z", "Y")
    }

    #[test]
    fn parses_four_rows() {
        let csv = "A,Z,Y\n0,0,1.5\n0,1,2\n1,0,3\n1,1,4.25\n";
        let ds = read_csv(csv.as_bytes(), &roles(), "mem").unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.treatment, vec![0, 0, 1, 1]);
        assert_eq!(ds.outcome, vec![1.5, 2.0, 3.0, 4.25]);
        assert_eq!(ds.ids, vec!["1", "2", "3", "4"]);
    }

    #[test]
    fn rejects_treatment_two() {
        let csv = "A,Z,Y\n0,0,1\n2,1,2\n";
        let err = read_csv(csv.as_bytes(), &roles(), "mem").unwrap_err();
        assert!(err.to_string().contains("treatment not in {0,1}"), "{err}");
    }

    #[test]
    fn missing_mediator_column_is_named() {
        let csv = "A,Y\n0,1\n";
        let err = read_csv(csv.as_bytes(), &roles(), "mem").unwrap_err();
        assert!(matches!(&err, Error::MissingColumn(c) if c == "Z"));
        assert!(err.to_string().contains("`Z`"));
    }

    #[test]
    fn non_numeric_cell_and_empty_file() {
        let csv = "A,Z,Y\n0,0,abc\n";
        let err = read_csv(csv.as_bytes(), &roles(), "mem").unwrap_err();
        assert!(matches!(err, Error::NonNumeric { row: 1, .. }));
        let err = read_csv("A,Z,Y\n".as_bytes(), &roles(), "mem").unwrap_err();
        assert!(matches!(err, Error::EmptyFile(_)));
        let err = read_csv("".as_bytes(), &roles(), "mem").unwrap_err();
        assert!(matches!(err, Error::EmptyFile(_) | Error::MissingColumn(_)));
    }

    #[test]
    fn validate_flags_empty_cell() {
        let csv = "A,Z,Y\n0,0,1\n0,1,1\n1,1,2\n1,1,3\n";
        let ds = read_csv(csv.as_bytes(), &roles(), "mem").unwrap();
        let rep = validate(&ds, &roles());
        assert_eq!(rep.issues, vec![ValidationIssue::EmptyCell { arm: 1, mediator: 0 }]);
    }

    #[test]
    fn validate_balanced_design_is_clean() {
        let csv = "A,Z,Y\n0,0,1\n0,1,1\n1,0,2\n1,1,3\n";
        let ds = read_csv(csv.as_bytes(), &roles(), "mem").unwrap();
        let rep = validate(&ds, &roles());
        assert!(rep.is_clean());
        assert_eq!(rep, validate(&ds, &roles()));
    }

    #[test]
    fn validate_duplicate_id() {
        let r = roles().with_unit_id("id");
        let csv = "A,Z,Y,id\n0,0,1,a\n0,1,1,b\n1,0,2,a\n1,1,3,c\n";
        let ds = read_csv(csv.as_bytes(), &r, "mem").unwrap();
        let rep = validate(&ds, &r);
        assert_eq!(rep.issues.len(), 1);
        assert!(rep.issues[0].describe().contains("duplicate id"));
    }

    #[test]
    fn roles_must_be_distinct() {
        let r = VariableRoles::new("A", "A", "Y");
        assert!(r.check(true).is_err());
        let r = roles();
        assert!(r.check(true).is_ok());
        assert!(r.check(false).is_err());
    }
}
