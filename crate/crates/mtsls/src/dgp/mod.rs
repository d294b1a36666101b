//! Ground-truth populations and seeded finite samples drawn from them.
//!
//! Sampling uses ChaCha8 with `seed_from_u64(seed)` and one stream per row
//! (`set_stream(row)`). Each row draws, in order: cell (stratified samplers
//! only), type, instrument point, a standard normal for the noise, then one
//! uniform per flag in name order. Rows are independent, so parallel and
//! sequential generation agree.

pub mod judge;
pub mod threshold;

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::design::{CellPopulation, Dataset, Population};
use crate::error::{Error, Result};

pub use judge::{build_judge_design, grid_judges, CaseType, Judge, JudgeDesign};
pub use threshold::{build_threshold_crossing_population, EffectProfile, LatentGrid, ThresholdDesign, ThresholdSpec};

/// Generator for row `i` under `seed`.
pub fn row_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn weighted_index(probs: impl IntoIterator<Item = f64>, what: &str) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(probs).map_err(|e| Error::InvalidPopulation(format!("{what}: {e}")))
}

struct Sampler<'a> {
    pop: &'a Population,
    types: WeightedIndex<f64>,
    points: WeightedIndex<f64>,
}

impl<'a> Sampler<'a> {
    fn new(pop: &'a Population) -> Result<Self> {
        Ok(Sampler {
            pop,
            types: weighted_index(pop.types().iter().map(|c| c.prob), "type probabilities")?,
            points: weighted_index(pop.design().probs().iter().copied(), "design probabilities")?,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, noise_sd: f64, flags: &[String]) -> Row {
        let s = self.types.sample(rng);
        let j = self.points.sample(rng);
        let c = &self.pop.types()[s];
        let t = c.assignment.assignment[j];
        let d = self.pop.coding().indicators(t);
        let e: f64 = rng.sample(StandardNormal);
        let y = c.y0 + d.iter().zip(&c.beta).map(|(a, b)| a * b).sum::<f64>() + noise_sd * e;
        let flags = flags
            .iter()
            .map(|f| rng.random::<f64>() < c.flags.get(f).copied().unwrap_or(0.0))
            .collect();
        Row {
            y,
            t,
            z: self.pop.design().support()[j].clone(),
            cell: 0,
            flags,
        }
    }
}

struct Row {
    y: f64,
    t: usize,
    z: Vec<f64>,
    cell: usize,
    flags: Vec<bool>,
}

fn flag_names<'a>(pops: impl Iterator<Item = &'a Population>) -> Vec<String> {
    let mut names = BTreeSet::new();
    for p in pops {
        for c in p.types() {
            names.extend(c.flags.keys().cloned());
        }
    }
    names.into_iter().collect()
}

fn check_args(n: usize, noise_sd: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::InvalidInput(format!("noise_sd must be finite and non-negative, got {noise_sd}")));
    }
    Ok(())
}

fn assemble(rows: Vec<Row>, m: usize, flags: &[String], cells: Option<&[String]>) -> Result<Dataset> {
    let mut y = Vec::with_capacity(rows.len());
    let mut t = Vec::with_capacity(rows.len());
    let mut z = Vec::with_capacity(rows.len() * m);
    let mut flag_cols = vec![Vec::with_capacity(rows.len()); flags.len()];
    let mut labels = Vec::new();
    for r in rows {
        y.push(r.y);
        t.push(r.t);
        z.extend(r.z);
        for (col, v) in flag_cols.iter_mut().zip(r.flags) {
            col.push(v);
        }
        if let Some(names) = cells {
            labels.push(names[r.cell].clone());
        }
    }
    let mut data = Dataset::new(m, y, t, z)?;
    if cells.is_some() {
        data = data.with_cells(labels)?;
    }
    for (name, col) in flags.iter().zip(flag_cols) {
        data = data.with_flag(name, col)?;
    }
    Ok(data)
}

/// `n` i.i.d. draws from `pop` with Gaussian outcome noise.
pub fn sample_dataset(pop: &Population, n: usize, seed: u64, noise_sd: f64) -> Result<Dataset> {
    check_args(n, noise_sd)?;
    let flags = flag_names(std::iter::once(pop));
    let sampler = Sampler::new(pop)?;
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| sampler.draw(&mut row_rng(seed, i), noise_sd, &flags))
        .collect();
    assemble(rows, pop.design().m(), &flags, None)
}

/// Draws from a stratified population; the cell label is attached per row.
pub fn sample_cell_dataset(pop: &CellPopulation, n: usize, seed: u64, noise_sd: f64) -> Result<Dataset> {
    check_args(n, noise_sd)?;
    let count = pop.cells().len();
    let flags = flag_names((0..count).map(|x| pop.population(x)));
    let samplers = (0..count)
        .map(|x| Sampler::new(pop.population(x)))
        .collect::<Result<Vec<_>>>()?;
    let cells = weighted_index(pop.cells().iter().map(|c| c.prob), "cell probabilities")?;
    let names: Vec<String> = pop.cells().iter().map(|c| c.label.clone()).collect();
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_rng(seed, i);
            let x = cells.sample(&mut rng);
            let mut r = samplers[x].draw(&mut rng, noise_sd, &flags);
            r.cell = x;
            r
        })
        .collect();
    assemble(rows, pop.m(), &flags, Some(&names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{InstrumentDesign, TreatmentCoding, TypeComponent};

    fn pop() -> Population {
        let design =
            InstrumentDesign::uniform(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        Population::new(
            design,
            TreatmentCoding::unordered(3),
            vec![
                TypeComponent::new(vec![0, 1, 2], 0.7, vec![1.0, -2.0], 0.5).with_flag("f", 0.4),
                TypeComponent::new(vec![1, 1, 1], 0.3, vec![3.0, 0.0], 0.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_single_type_is_deterministic_in_z() {
        let p = pop().with_types(vec![TypeComponent::new(vec![0, 1, 2], 1.0, vec![1.0, -2.0], 0.5)]).unwrap();
        let d = sample_dataset(&p, 200, 7, 0.0).unwrap();
        for i in 0..d.len() {
            let z = d.z_row(i);
            let expect = 0.5 + z[0] * 1.0 - 2.0 * z[1];
            assert!((d.y()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = sample_dataset(&pop(), 500, 42, 1.0).unwrap();
        let b = sample_dataset(&pop(), 500, 42, 1.0).unwrap();
        assert_eq!(a, b);
        let c = sample_dataset(&pop(), 500, 43, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| sample_dataset(&pop(), 300, 9, 1.0).unwrap());
        let b = sample_dataset(&pop(), 300, 9, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flags_follow_type_probabilities() {
        let d = sample_dataset(&pop(), 20_000, 1, 0.0).unwrap();
        let f = d.flag("f").unwrap();
        let share = f.iter().filter(|&&v| v).count() as f64 / d.len() as f64;
        assert!((share - 0.28).abs() < 0.02);
    }
}
