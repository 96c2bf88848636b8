//! Observed-data representation, CSV ingestion and cross-fitting folds.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tags};

/// A named set of covariate indices, used for benchmarking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGroup {
    pub name: String,
    pub indices: Vec<usize>,
}

/// Observed sample. `y[i]` is `Some` exactly when `s[i] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    y: Vec<Option<f64>>,
    d: Vec<u8>,
    s: Vec<u8>,
    /// Row-major n × p.
    x: Vec<f64>,
    covariate_names: Vec<String>,
    groups: Vec<CovariateGroup>,
    full_selection: bool,
}

impl Dataset {
    pub fn new(
        y: Vec<Option<f64>>,
        d: Vec<u8>,
        s: Vec<u8>,
        x: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let p = covariate_names.len();
        let n = d.len();
        let data = Dataset { n, p, y, d, s, x, covariate_names, groups: Vec::new(), full_selection: false };
        data.validate()?;
        Ok(data)
    }

    /// A sample with every outcome observed (S ≡ 1). The selection column is
    /// constant by construction, which `new` would otherwise reject.
    pub fn fully_observed(y: Vec<f64>, d: Vec<u8>, x: Vec<f64>, covariate_names: Vec<String>) -> Result<Self> {
        let n = d.len();
        let data = Dataset {
            n,
            p: covariate_names.len(),
            y: y.into_iter().map(Some).collect(),
            d,
            s: vec![1; n],
            x,
            covariate_names,
            groups: Vec::new(),
            full_selection: true,
        };
        data.validate()?;
        Ok(data)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::Consistency("dataset has no rows".into()));
        }
        if self.y.len() != n || self.s.len() != n {
            return Err(Error::Consistency(format!(
                "column lengths differ: d={}, y={}, s={}",
                n,
                self.y.len(),
                self.s.len()
            )));
        }
        if self.x.len() != n * self.p {
            return Err(Error::Dimension { expected: n * self.p, got: self.x.len() });
        }
        for (i, (&d, &s)) in self.d.iter().zip(&self.s).enumerate() {
            if d > 1 || s > 1 {
                return Err(Error::Consistency(format!("row {i}: d and s must be 0 or 1")));
            }
            match (s, self.y[i]) {
                (1, None) => return Err(Error::Consistency(format!("row {i}: outcome missing where s=1"))),
                (0, Some(_)) => return Err(Error::Consistency(format!("row {i}: outcome present where s=0"))),
                (_, Some(v)) if !v.is_finite() => {
                    return Err(Error::Consistency(format!("row {i}: outcome is not finite")))
                }
                _ => {}
            }
        }
        if !(self.d.contains(&0) && self.d.contains(&1)) {
            return Err(Error::Consistency("degenerate treatment: d must take both values 0 and 1".into()));
        }
        if !self.full_selection && !(self.s.contains(&0) && self.s.contains(&1)) {
            return Err(Error::Consistency("degenerate selection: s must take both values 0 and 1".into()));
        }
        if let Some(pos) = self.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Consistency(format!(
                "non-finite covariate at row {}, column {}",
                pos / self.p.max(1),
                pos % self.p.max(1)
            )));
        }
        let mut seen = HashSet::new();
        for name in &self.covariate_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate covariate name `{name}`")));
            }
        }
        validate_groups(&self.groups, self.p)?;
        Ok(())
    }

    pub fn with_groups(mut self, groups: Vec<CovariateGroup>) -> Result<Self> {
        validate_groups(&groups, self.p)?;
        self.groups = groups;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[Option<f64>] {
        &self.y
    }

    pub fn d(&self) -> &[u8] {
        &self.d
    }

    pub fn s(&self) -> &[u8] {
        &self.s
    }

    /// Row-major covariate matrix.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn groups(&self) -> &[CovariateGroup] {
        &self.groups
    }

    pub fn is_fully_observed(&self) -> bool {
        self.full_selection
    }

    /// Outcome with the `Y = S·Y` convention: zero where unobserved.
    pub fn y_filled(&self) -> Vec<f64> {
        self.y.iter().map(|v| v.unwrap_or(0.0)).collect()
    }

    pub fn selected_count(&self) -> usize {
        self.s.iter().filter(|&&s| s == 1).count()
    }

    /// Copy without the given covariate columns. Groups are dropped because
    /// their indices no longer apply.
    pub fn drop_covariates(&self, drop: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = drop.iter().find(|&&j| j >= self.p) {
            return Err(Error::Group(format!("covariate index {bad} out of range (p = {})", self.p)));
        }
        let keep: Vec<usize> = (0..self.p).filter(|j| !drop.contains(j)).collect();
        if keep.is_empty() {
            return Err(Error::Group("dropping the group leaves no covariates".into()));
        }
        let mut x = Vec::with_capacity(self.n * keep.len());
        for i in 0..self.n {
            let row = self.row(i);
            x.extend(keep.iter().map(|&j| row[j]));
        }
        Ok(Dataset {
            n: self.n,
            p: keep.len(),
            y: self.y.clone(),
            d: self.d.clone(),
            s: self.s.clone(),
            x,
            covariate_names: keep.iter().map(|&j| self.covariate_names[j].clone()).collect(),
            groups: Vec::new(),
            full_selection: self.full_selection,
        })
    }

    /// Appends a covariate column.
    pub fn with_covariate(&self, name: &str, values: &[f64]) -> Result<Dataset> {
        if values.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: values.len() });
        }
        let mut x = Vec::with_capacity(self.n * (self.p + 1));
        for (i, &v) in values.iter().enumerate() {
            x.extend_from_slice(self.row(i));
            x.push(v);
        }
        let mut names = self.covariate_names.clone();
        names.push(name.to_string());
        let data = Dataset {
            n: self.n,
            p: self.p + 1,
            y: self.y.clone(),
            d: self.d.clone(),
            s: self.s.clone(),
            x,
            covariate_names: names,
            groups: self.groups.clone(),
            full_selection: self.full_selection,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }
}

fn validate_groups(groups: &[CovariateGroup], p: usize) -> Result<()> {
    let mut used = HashSet::new();
    let mut names = HashSet::new();
    for g in groups {
        if !names.insert(g.name.as_str()) {
            return Err(Error::Group(format!("duplicate group name `{}`", g.name)));
        }
        if g.indices.is_empty() {
            return Err(Error::Group(format!("group `{}` is empty", g.name)));
        }
        for &j in &g.indices {
            if j >= p {
                return Err(Error::Group(format!("group `{}` index {j} out of range (p = {p})", g.name)));
            }
            if !used.insert(j) {
                return Err(Error::Group(format!("covariate {j} appears in more than one group")));
            }
        }
    }
    Ok(())
}

/// Column roles for CSV ingestion. Every other column is a covariate unless
/// listed in `drop`.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub y: String,
    pub d: String,
    pub s: String,
    pub drop: Vec<String>,
}

impl CsvSchema {
    pub fn new(y: &str, d: &str, s: &str) -> Self {
        CsvSchema { y: y.into(), d: d.into(), s: s.into(), drop: Vec::new() }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t == "NA"
}

fn parse_binary(field: &str, line: usize, col: &str) -> Result<u8> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("column `{col}`: `{field}` is not numeric") })?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::Consistency(format!("line {line}: column `{col}` must be 0 or 1, got {field}")))
    }
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let roles = [schema.y.as_str(), schema.d.as_str(), schema.s.as_str()];
    if roles[0] == roles[1] || roles[0] == roles[2] || roles[1] == roles[2] {
        return Err(Error::Schema("outcome, treatment and selection must be distinct columns".into()));
    }
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::Schema(format!("duplicate column `{h}` in header")));
        }
    }
    let find = |name: &str, role: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{role} column `{name}` not found in header")))
    };
    let yi = find(&schema.y, "outcome")?;
    let di = find(&schema.d, "treatment")?;
    let si = find(&schema.s, "selection")?;
    for dropped in &schema.drop {
        if roles.contains(&dropped.as_str()) {
            return Err(Error::Schema(format!("cannot drop role column `{dropped}`")));
        }
        find(dropped, "dropped")?;
    }
    let cov_idx: Vec<usize> = (0..header.len())
        .filter(|&j| j != yi && j != di && j != si && !schema.drop.contains(&header[j]))
        .collect();
    let names: Vec<String> = cov_idx.iter().map(|&j| header[j].clone()).collect();

    let (mut y, mut d, mut s, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let sv = parse_binary(&record[si], line, &schema.s)?;
        let dv = parse_binary(&record[di], line, &schema.d)?;
        let yv = if is_missing(&record[yi]) {
            None
        } else {
            Some(record[yi].trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("outcome `{}` is not numeric", &record[yi]),
            })?)
        };
        match (sv, yv) {
            (1, None) => return Err(Error::Consistency(format!("line {line}: outcome missing where s=1"))),
            (0, Some(_)) => return Err(Error::Consistency(format!("line {line}: outcome present where s=0"))),
            _ => {}
        }
        for &j in &cov_idx {
            let v: f64 = record[j].trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("covariate `{}` value `{}` is not numeric", header[j], &record[j]),
            })?;
            x.push(v);
        }
        y.push(yv);
        d.push(dv);
        s.push(sv);
    }
    Dataset::new(y, d, s, x, names)
}

/// Formats a float with 17 significant digits, which round-trips every f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(data, file)
}

/// Writes columns `y, d, s, <covariates>`; missing outcomes are empty cells.
pub fn write_csv_to<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string(), "d".to_string(), "s".to_string()];
    header.extend(data.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..data.n {
        let mut rec = Vec::with_capacity(3 + data.p);
        rec.push(data.y[i].map(format_f64).unwrap_or_default());
        rec.push(data.d[i].to_string());
        rec.push(data.s[i].to_string());
        rec.extend(data.row(i).iter().map(|&v| format_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSON object mapping group name to a list of covariate names.
pub fn load_groups(path: impl AsRef<Path>, data: &Dataset) -> Result<Vec<CovariateGroup>> {
    let text = std::fs::read_to_string(path)?;
    parse_groups(&text, data)
}

pub fn parse_groups(json: &str, data: &Dataset) -> Result<Vec<CovariateGroup>> {
    let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(json)?;
    let mut groups = Vec::with_capacity(raw.len());
    for (name, cols) in raw {
        let mut indices = Vec::with_capacity(cols.len());
        for c in cols {
            let j = data
                .covariate_index(&c)
                .ok_or_else(|| Error::Group(format!("group `{name}` names unknown covariate `{c}`")))?;
            indices.push(j);
        }
        groups.push(CovariateGroup { name, indices });
    }
    validate_groups(&groups, data.p())?;
    Ok(groups)
}

/// Cross-fitting fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// Checks the plan against a dataset: partition of the rows, every fold
    /// with both arms and a selected row in each arm.
    pub fn validate_for(&self, data: &Dataset) -> Result<()> {
        if self.assignment.len() != data.n() {
            return Err(Error::Dimension { expected: data.n(), got: self.assignment.len() });
        }
        if self.k < 2 {
            return Err(Error::Config("fold count must be at least 2".into()));
        }
        let mut cells = vec![[0usize; 4]; self.k];
        for (i, &f) in self.assignment.iter().enumerate() {
            if f >= self.k {
                return Err(Error::Stratification(format!("row {i} assigned to fold {f} >= k")));
            }
            cells[f][cell_of(data.d()[i], data.s()[i])] += 1;
        }
        for (f, c) in cells.iter().enumerate() {
            if c[1] == 0 || c[3] == 0 {
                return Err(Error::Stratification(format!("fold {f} lacks a selected row in some treatment arm")));
            }
        }
        Ok(())
    }
}

#[inline]
fn cell_of(d: u8, s: u8) -> usize {
    (d as usize) * 2 + s as usize
}

/// Folds stratified on the (d, s) cross. Members of each cell are shuffled
/// and dealt round-robin, with the starting fold carried over between cells
/// so overall fold sizes differ by at most one.
pub fn make_folds(data: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    let n = data.n();
    if k < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {k}")));
    }
    if k > n / 4 {
        return Err(Error::Config(format!("fold count {k} exceeds n/4 = {}", n / 4)));
    }
    let mut cells: [Vec<usize>; 4] = Default::default();
    for i in 0..n {
        cells[cell_of(data.d()[i], data.s()[i])].push(i);
    }
    for (c, members) in cells.iter().enumerate() {
        let (d, s) = (c / 2, c % 2);
        let required = s == 1;
        if (required || !members.is_empty()) && members.len() < k {
            return Err(Error::Stratification(format!(
                "cell (d={d}, s={s}) has {} rows, fewer than k = {k}",
                members.len()
            )));
        }
    }
    let mut rng = rng::stream(seed, &[tags::FOLDS]);
    let mut assignment = vec![usize::MAX; n];
    let mut offset = 0usize;
    for members in cells.iter_mut() {
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    let plan = FoldPlan { k, assignment, seed };
    plan.validate_for(data)?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_data(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), &CsvSchema::new("y", "d", "s"))
    }

    #[test]
    fn minimal_valid_file() {
        let data = csv_data("y,d,s,x1\n1.5,1,1,0.1\n,0,0,0.2\nNA,1,0,0.3\n2.0,0,1,0.4\n").unwrap();
        assert_eq!(data.n(), 4);
        assert_eq!(data.p(), 1);
        assert_eq!(data.y()[1], None);
        assert_eq!(data.y()[3], Some(2.0));
    }

    #[test]
    fn missing_outcome_with_selection_is_rejected() {
        let err = csv_data("y,d,s,x1\n,1,1,0.1\n,0,0,0.2\n1,1,1,0.3\n2.0,0,1,0.4\n").unwrap_err();
        assert!(matches!(err, Error::Consistency(_)), "{err}");
    }

    #[test]
    fn outcome_present_without_selection_is_rejected() {
        let err = csv_data("y,d,s,x1\n3,1,0,0.1\n,0,0,0.2\n1,1,1,0.3\n2.0,0,1,0.4\n").unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }

    #[test]
    fn degenerate_treatment_is_rejected() {
        let err = csv_data("y,d,s,x1\n1,1,1,0.1\n,1,0,0.2\n1,1,1,0.3\n2.0,1,1,0.4\n").unwrap_err();
        match err {
            Error::Consistency(msg) => assert!(msg.contains("treatment")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn schema_errors() {
        let text = "y,d,s,x1\n1,1,1,0.1\n";
        let missing = read_csv(text.as_bytes(), &CsvSchema::new("y", "treat", "s")).unwrap_err();
        assert!(matches!(missing, Error::Schema(_)));
        let dup = read_csv(text.as_bytes(), &CsvSchema::new("y", "y", "s")).unwrap_err();
        assert!(matches!(dup, Error::Schema(_)));
        let dup_header = csv_data("y,d,s,x1,x1\n1,1,1,0.1,0.2\n").unwrap_err();
        assert!(matches!(dup_header, Error::Schema(_)));
    }

    #[test]
    fn malformed_rows_are_parse_errors() {
        let short = csv_data("y,d,s,x1\n1,1,1\n").unwrap_err();
        assert!(matches!(short, Error::Parse { line: 2, .. }), "{short}");
        let text = csv_data("y,d,s,x1\n1,1,1,abc\n").unwrap_err();
        assert!(matches!(text, Error::Parse { .. }));
    }

    #[test]
    fn drop_columns_and_groups() {
        let schema = CsvSchema { drop: vec!["id".into()], ..CsvSchema::new("y", "d", "s") };
        let text = "id,y,d,s,a,b\n1,1,1,1,0.1,5\n2,,0,0,0.2,6\n3,1,1,1,0.3,7\n4,2,0,1,0.4,8\n5,,1,0,0.5,9\n";
        let data = read_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(data.covariate_names(), &["a".to_string(), "b".to_string()]);
        let groups = parse_groups(r#"{"second": ["b"], "first": ["a"]}"#, &data).unwrap();
        assert_eq!(groups[0].name, "first");
        assert_eq!(groups[1].indices, vec![1]);
        assert!(parse_groups(r#"{"g": ["zzz"]}"#, &data).is_err());
        assert!(parse_groups(r#"{"g": ["a"], "h": ["a"]}"#, &data).is_err());
        let dropped = data.drop_covariates(&[0]).unwrap();
        assert_eq!(dropped.p(), 1);
        assert_eq!(dropped.row(2), &[7.0]);
        assert!(matches!(data.drop_covariates(&[0, 1]), Err(Error::Group(_))));
    }

    fn balanced(n_per_cell: usize) -> Dataset {
        let mut y = Vec::new();
        let mut d = Vec::new();
        let mut s = Vec::new();
        let mut x = Vec::new();
        for cell in 0..4u8 {
            for r in 0..n_per_cell {
                let (dv, sv) = (cell / 2, cell % 2);
                d.push(dv);
                s.push(sv);
                y.push(if sv == 1 { Some(r as f64) } else { None });
                x.push(r as f64 + 0.1 * cell as f64);
            }
        }
        Dataset::new(y, d, s, x, vec!["x".into()]).unwrap()
    }

    #[test]
    fn folds_exact_divisibility() {
        let data = balanced(3);
        let plan = make_folds(&data, 3, 11).unwrap();
        for f in 0..3 {
            let mut per_cell = [0; 4];
            for i in plan.test_rows(f) {
                per_cell[cell_of(data.d()[i], data.s()[i])] += 1;
            }
            assert_eq!(per_cell, [1, 1, 1, 1]);
        }
        assert_eq!(plan, make_folds(&data, 3, 11).unwrap());
    }

    #[test]
    fn folds_reject_small_cells() {
        let y = vec![Some(1.0), None, Some(2.0), Some(1.0), Some(3.0), Some(0.5), None, Some(0.1), Some(0.2), None, Some(0.3), Some(0.4)];
        let s: Vec<u8> = y.iter().map(|v| v.is_some() as u8).collect();
        // (d=1, s=0) has a single member.
        let d = vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let data = Dataset::new(y, d, s, (0..12).map(|v| v as f64).collect(), vec!["x".into()]).unwrap();
        assert!(matches!(make_folds(&data, 3, 1), Err(Error::Stratification(_))));
        assert!(matches!(make_folds(&data, 1, 1), Err(Error::Config(_))));
        assert!(matches!(make_folds(&data, 4, 1), Err(Error::Config(_))));
    }

    #[test]
    fn fully_observed_data_folds() {
        let d: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let data = Dataset::fully_observed(vec![0.0; 20], d, vec![0.0; 20], vec!["x".into()]).unwrap();
        let plan = make_folds(&data, 2, 3).unwrap();
        assert_eq!(plan.sizes(), vec![10, 10]);
    }

    #[test]
    fn write_then_read_round_trips() {
        let data = csv_data("y,d,s,x1,x2\n0.1,1,1,1e-300,3\n,0,0,-0.0,1.25\n2.5,0,1,123456.789,-7\n,1,0,0.3333333333333333,0\n").unwrap();
        let mut buf = Vec::new();
        write_csv_to(&data, &mut buf).unwrap();
        let back = csv_data(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, data);
    }
}
