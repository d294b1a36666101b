use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{CellPopulation, Population, TreatmentCoding};
use crate::error::{Error, Result};

/// Finite sample of `(Y, T, Z, X-cell, flags)` rows, stored by column.
///
/// Optional frequency weights let an exact population support be treated as
/// data; all estimators and tests honour them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    m: usize,
    y: Vec<f64>,
    t: Vec<usize>,
    z: Vec<f64>,
    cells: Option<Vec<usize>>,
    cell_labels: Vec<String>,
    flags: BTreeMap<String, Vec<bool>>,
    weights: Option<Vec<f64>>,
}

impl Dataset {
    /// `z` is row-major with `m` entries per row.
    pub fn new(m: usize, y: Vec<f64>, t: Vec<usize>, z: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidData("instrument dimension must be at least 1".into()));
        }
        if y.len() != t.len() || z.len() != y.len() * m {
            return Err(Error::InvalidData(format!(
                "column lengths disagree: {} outcomes, {} treatments, {} instrument values for m = {m}",
                y.len(),
                t.len(),
                z.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("row {i}: outcome is not finite")));
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("row {}: instrument is not finite", i / m)));
        }
        Ok(Dataset {
            m,
            y,
            t,
            z,
            cells: None,
            cell_labels: Vec::new(),
            flags: BTreeMap::new(),
            weights: None,
        })
    }

    /// Attach a cell label per row. Labels are interned in sorted order.
    pub fn with_cells(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::InvalidData(format!(
                "{} cell labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        let mut names: Vec<String> = labels.clone();
        names.sort();
        names.dedup();
        let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let cells = labels.iter().map(|l| index[l.as_str()]).collect();
        self.cells = Some(cells);
        self.cell_labels = names;
        Ok(self)
    }

    pub fn with_flag(mut self, name: &str, values: Vec<bool>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::InvalidData(format!(
                "flag {name} has {} values for {} rows",
                values.len(),
                self.len()
            )));
        }
        self.flags.insert(name.to_string(), values);
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::InvalidData(format!(
                "{} weights for {} rows",
                weights.len(),
                self.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidData("weights must be non-negative with a positive sum".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[usize] {
        &self.t
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.m..(i + 1) * self.m]
    }

    /// Instruments as an `N × m` matrix.
    pub fn z_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.m, &self.z)
    }

    /// Outcomes as an `N × 1` matrix.
    pub fn y_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.len(), 1, &self.y)
    }

    /// Treatment indicators `D` as an `N × n` matrix.
    pub fn treatment_matrix(&self, coding: &TreatmentCoding) -> Result<DMatrix<f64>> {
        self.check_treatments(coding)?;
        let n = coding.n();
        let table: Vec<Vec<f64>> = (0..coding.n_treatments()).map(|t| coding.indicators(t)).collect();
        Ok(DMatrix::from_fn(self.len(), n, |i, k| table[self.t[i]][k]))
    }

    /// All treatment labels lie in `0..n_treatments`.
    pub fn check_treatments(&self, coding: &TreatmentCoding) -> Result<()> {
        if let Some(i) = self.t.iter().position(|&t| t >= coding.n_treatments()) {
            return Err(Error::InvalidData(format!(
                "row {i}: treatment {} outside 0..{}",
                self.t[i],
                coding.n_treatments()
            )));
        }
        Ok(())
    }

    /// Cell index per row, if cells are attached.
    pub fn cells(&self) -> Option<&[usize]> {
        self.cells.as_deref()
    }

    pub fn cell_labels(&self) -> &[String] {
        &self.cell_labels
    }

    pub fn flag(&self, name: &str) -> Option<&[bool]> {
        self.flags.get(name).map(|v| v.as_slice())
    }

    pub fn flag_names(&self) -> Vec<&str> {
        self.flags.keys().map(|s| s.as_str()).collect()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Row count per cell, in label order.
    pub fn cell_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cell_labels.len()];
        if let Some(cells) = &self.cells {
            for &c in cells {
                sizes[c] += 1;
            }
        }
        sizes
    }

    /// Cells with fewer than `m + 1` rows.
    pub fn degenerate_cells(&self) -> Vec<String> {
        self.cell_sizes()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s < self.m + 1)
            .map(|(c, _)| self.cell_labels[c].clone())
            .collect()
    }

    /// Rows where `keep` is true, with cell labels re-interned.
    pub fn subset(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.len() {
            return Err(Error::InvalidData("subset mask length differs from row count".into()));
        }
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep[i]).collect();
        self.take(&rows)
    }

    /// The listed rows in order (repeats allowed), with cell labels
    /// re-interned.
    pub fn take(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&i) = rows.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidData(format!("row {i} out of range")));
        }
        let mut out = Dataset::new(
            self.m,
            rows.iter().map(|&i| self.y[i]).collect(),
            rows.iter().map(|&i| self.t[i]).collect(),
            rows.iter().flat_map(|&i| self.z_row(i).to_vec()).collect(),
        )?;
        if let Some(cells) = &self.cells {
            out = out.with_cells(rows.iter().map(|&i| self.cell_labels[cells[i]].clone()).collect())?;
        }
        for (name, values) in &self.flags {
            out = out.with_flag(name, rows.iter().map(|&i| values[i]).collect())?;
        }
        if let Some(w) = &self.weights {
            out.weights = Some(rows.iter().map(|&i| w[i]).collect());
        }
        Ok(out)
    }

    /// Copy with the cell column removed.
    pub fn without_cells(&self) -> Self {
        let mut out = self.clone();
        out.cells = None;
        out.cell_labels.clear();
        out
    }

    /// Replace the outcome with `1[Y ≥ cut]`.
    pub fn binarize_outcome(&self, cut: f64) -> Self {
        let mut out = self.clone();
        out.y = self.y.iter().map(|&v| if v >= cut { 1.0 } else { 0.0 }).collect();
        out
    }

    /// Replace the outcome column.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::InvalidData("outcome length differs from row count".into()));
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    /// Exact population support as weighted rows: one row per (type, support
    /// point) with weight `Pr[s]·Pr[Z = z]` and outcome `y0 + v_s(z)·β^s`.
    /// With `flag`, each row is split by the flag with the matching weights.
    pub fn from_population(pop: &Population, flag: Option<&str>) -> Result<Self> {
        let mut b = SupportBuilder::new(pop.design().m());
        b.push_population(pop, flag, None);
        b.finish()
    }

    /// Exact support of a stratified population, with cells attached.
    pub fn from_cell_population(pop: &CellPopulation) -> Result<Self> {
        let mut b = SupportBuilder::new(pop.m());
        for (x, cell) in pop.cells().iter().enumerate() {
            b.push_population(pop.population(x), None, Some((&cell.label, cell.prob)));
        }
        b.finish()
    }
}

struct SupportBuilder {
    m: usize,
    y: Vec<f64>,
    t: Vec<usize>,
    z: Vec<f64>,
    w: Vec<f64>,
    cells: Vec<String>,
    flag: Option<(String, Vec<bool>)>,
}

impl SupportBuilder {
    fn new(m: usize) -> Self {
        SupportBuilder {
            m,
            y: Vec::new(),
            t: Vec::new(),
            z: Vec::new(),
            w: Vec::new(),
            cells: Vec::new(),
            flag: None,
        }
    }

    fn push_population(&mut self, pop: &Population, flag: Option<&str>, cell: Option<(&str, f64)>) {
        let coding = pop.coding();
        let design = pop.design();
        let cell_prob = cell.map_or(1.0, |c| c.1);
        if let Some(name) = flag {
            self.flag.get_or_insert_with(|| (name.to_string(), Vec::new()));
        }
        for c in pop.types() {
            let splits: Vec<(Option<bool>, f64)> = match flag {
                Some(name) => {
                    let f = c.flags.get(name).copied().unwrap_or(0.0);
                    vec![(Some(true), f), (Some(false), 1.0 - f)]
                }
                None => vec![(None, 1.0)],
            };
            for (j, z) in design.support().iter().enumerate() {
                let t = c.assignment.assignment[j];
                let d = coding.indicators(t);
                let y = c.y0 + d.iter().zip(&c.beta).map(|(a, b)| a * b).sum::<f64>();
                for &(value, share) in &splits {
                    let w = cell_prob * c.prob * design.probs()[j] * share;
                    if w <= 0.0 {
                        continue;
                    }
                    self.y.push(y);
                    self.t.push(t);
                    self.z.extend_from_slice(z);
                    self.w.push(w);
                    if let Some((label, _)) = cell {
                        self.cells.push(label.to_string());
                    }
                    if let (Some(v), Some((_, values))) = (value, self.flag.as_mut()) {
                        values.push(v);
                    }
                }
            }
        }
    }

    fn finish(self) -> Result<Dataset> {
        let mut data = Dataset::new(self.m, self.y, self.t, self.z)?.with_weights(self.w)?;
        if !self.cells.is_empty() {
            data = data.with_cells(self.cells)?;
        }
        if let Some((name, values)) = self.flag {
            data = data.with_flag(&name, values)?;
        }
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::new(1, vec![1.0, 2.0, 3.0], vec![0, 1, 1], vec![0.0, 1.0, 1.0])
            .unwrap()
            .with_cells(vec!["b".into(), "a".into(), "b".into()])
            .unwrap()
    }

    #[test]
    fn cells_are_interned_sorted() {
        let d = small();
        assert_eq!(d.cell_labels(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.cells().unwrap(), &[1, 0, 1]);
        assert_eq!(d.cell_sizes(), vec![1, 2]);
        assert_eq!(d.degenerate_cells(), vec!["a".to_string()]);
    }

    #[test]
    fn subset_keeps_columns_aligned() {
        let d = small().with_flag("f", vec![true, false, true]).unwrap();
        let s = d.subset(d.flag("f").unwrap()).unwrap();
        assert_eq!(s.y(), &[1.0, 3.0]);
        assert_eq!(s.cell_labels(), &["b".to_string()]);
        assert_eq!(s.flag("f").unwrap(), &[true, true]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Dataset::new(2, vec![1.0], vec![0], vec![0.0]).is_err());
        assert!(Dataset::new(1, vec![f64::NAN], vec![0], vec![0.0]).is_err());
        let d = small();
        assert!(d.treatment_matrix(&TreatmentCoding::unordered(2)).is_ok());
        let bad = Dataset::new(1, vec![1.0], vec![5], vec![0.0]).unwrap();
        assert!(bad.treatment_matrix(&TreatmentCoding::unordered(3)).is_err());
    }
}
