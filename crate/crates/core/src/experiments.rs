//! Train/evaluate matrices for the accuracy tables, the `R + R̄ <= 1` bound check
//! and the acceptance bands applied to reproduced cells.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{augment_shifts, split, symmetrize, Dataset};
use crate::features::{FeatureMap, FeatureMapKind};
use crate::nn::{argmax, unique_argmin, Mlp, Workspace, NUM_CLASSES};
use crate::train::{train, TrainConfig};
use crate::{Error, Result};

pub type Confusion = [[usize; NUM_CLASSES]; NUM_CLASSES];

/// Correct/total counts with a confusion matrix (rows = true label, columns = prediction).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub confusion: Confusion,
}

impl Accuracy {
    pub fn rate(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Accuracy recomputed from the confusion diagonal.
    pub fn rate_from_confusion(&self) -> f64 {
        let diag: usize = (0..NUM_CLASSES).map(|i| self.confusion[i][i]).sum();
        let total: usize = self.confusion.iter().flatten().sum();
        diag as f64 / total as f64
    }
}

/// Per-sample predictions of `model` on `dataset` after the feature map.
pub fn predictions(model: &Mlp, map: &FeatureMap, dataset: &Dataset) -> Result<Vec<usize>> {
    if model.input_dim() != map.output_dim() {
        return Err(Error::Shape {
            expected: model.input_dim(),
            actual: map.output_dim(),
        });
    }
    let mut ws = Workspace::new(model);
    Ok(dataset
        .images
        .iter()
        .map(|img| {
            model.forward_ws(&map.apply(&img.pixels), &mut ws);
            argmax(ws.logits())
        })
        .collect())
}

pub fn accuracy(model: &Mlp, map: &FeatureMap, dataset: &Dataset) -> Result<Accuracy> {
    if dataset.is_empty() {
        return Err(Error::Empty(format!("cannot score on `{}`", dataset.name)));
    }
    let preds = predictions(model, map, dataset)?;
    let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
    let mut correct = 0;
    for (img, &p) in dataset.images.iter().zip(&preds) {
        confusion[img.label][p] += 1;
        correct += usize::from(img.label == p);
    }
    Ok(Accuracy {
        correct,
        total: dataset.len(),
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub r: f64,
    pub r_bar: f64,
    pub sum: f64,
    /// `correct + correct_inverted <= total`, decided on integer counts.
    pub holds: bool,
    pub correct: usize,
    pub correct_inverted: usize,
    pub total: usize,
    /// Samples whose logits have a unique minimum.
    pub unique_min_samples: usize,
    /// Of those, how many had `predict(-x) != argmin logits(x)`.
    pub antisymmetry_violations: usize,
    /// Samples correct on `x` and also correct on `-x`.
    pub correct_on_both: usize,
}

/// Evaluates `R` on `test` and `R̄` on its inversion for a bias-free network on raw
/// pixels, and checks the per-sample consequence of logit antisymmetry.
pub fn bound_check(model: &Mlp, map: &FeatureMap, test: &Dataset) -> Result<BoundReport> {
    if model.has_bias() {
        return Err(Error::Precondition(
            "bound check needs a network without biases".into(),
        ));
    }
    if map.kind() != FeatureMapKind::Identity {
        return Err(Error::Precondition(format!(
            "bound check needs identity features, got {}",
            map.kind()
        )));
    }
    if test.is_empty() {
        return Err(Error::Empty("bound check test set".into()));
    }
    let mut ws = Workspace::new(model);
    let mut report = BoundReport {
        r: 0.0,
        r_bar: 0.0,
        sum: 0.0,
        holds: false,
        correct: 0,
        correct_inverted: 0,
        total: test.len(),
        unique_min_samples: 0,
        antisymmetry_violations: 0,
        correct_on_both: 0,
    };
    for img in &test.images {
        model.forward_ws(&img.pixels, &mut ws);
        let logits = ws.logits().to_vec();
        let pred = argmax(&logits);
        let neg = img.pixels.map(|v| -v);
        model.forward_ws(&neg, &mut ws);
        let pred_neg = argmax(ws.logits());
        if let Some(min) = unique_argmin(&logits) {
            report.unique_min_samples += 1;
            if pred_neg != min {
                report.antisymmetry_violations += 1;
            }
        }
        let (ok, ok_neg) = (pred == img.label, pred_neg == img.label);
        report.correct += usize::from(ok);
        report.correct_inverted += usize::from(ok_neg);
        report.correct_on_both += usize::from(ok && ok_neg);
    }
    report.r = report.correct as f64 / report.total as f64;
    report.r_bar = report.correct_inverted as f64 / report.total as f64;
    report.sum = report.r + report.r_bar;
    report.holds = report.correct + report.correct_inverted <= report.total;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainVariant {
    /// `X_train`
    Original,
    /// `±X_train`: originals plus inverted copies, equally weighted.
    Symmetrized,
}

impl fmt::Display for TrainVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Original => "X_train",
            Self::Symmetrized => "±X_train",
        })
    }
}

/// The augmented corpus split into train and test halves.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    pub split_seed: u64,
}

pub const DEFAULT_TEST_FRACTION: f64 = 0.25;

/// Enlarges by the five shifts, then splits by origin.
pub fn prepare_splits(corpus: &Dataset, test_fraction: f64, split_seed: u64) -> Result<Splits> {
    let (train, test) = split(&augment_shifts(corpus), test_fraction, split_seed)?;
    Ok(Splits {
        train,
        test,
        split_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub train_variant: TrainVariant,
    /// Carries seed, bias mode and feature map.
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub feature_map: FeatureMapKind,
    pub bias_mode: bool,
    pub train_set_name: String,
    pub seed: u64,
    /// Accuracy on `X_test`.
    pub r: f64,
    /// Accuracy on `-X_test`.
    pub r_bar: f64,
    pub bound_sum: f64,
    pub test: Accuracy,
    pub test_inverted: Accuracy,
    pub sample_counts: SampleCounts,
    /// Present for bias-free identity-feature models.
    pub bound: Option<BoundReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub train: usize,
    pub test: usize,
}

impl EvalReport {
    /// Scores `model` on `test` and its inversion.
    pub fn evaluate(
        model_id: String,
        model: &Mlp,
        map: &FeatureMap,
        train_set_name: String,
        train_size: usize,
        seed: u64,
        test: &Dataset,
    ) -> Result<Self> {
        let acc = accuracy(model, map, test)?;
        let acc_inv = accuracy(model, map, &test.inverted())?;
        let bound = (!model.has_bias() && map.kind() == FeatureMapKind::Identity)
            .then(|| bound_check(model, map, test))
            .transpose()?;
        Ok(Self {
            model_id,
            feature_map: map.kind(),
            bias_mode: model.has_bias(),
            train_set_name,
            seed,
            r: acc.rate(),
            r_bar: acc_inv.rate(),
            bound_sum: acc.rate() + acc_inv.rate(),
            sample_counts: SampleCounts {
                train: train_size,
                test: test.len(),
            },
            test: acc,
            test_inverted: acc_inv,
            bound,
        })
    }

    /// Accuracies and their sum agree with the stored confusion matrices.
    pub fn is_self_consistent(&self) -> bool {
        self.r == self.test.rate_from_confusion()
            && self.r_bar == self.test_inverted.rate_from_confusion()
            && self.bound_sum == self.r + self.r_bar
    }
}

#[derive(Debug, Clone)]
pub struct RowResult {
    pub report: EvalReport,
    pub model: Mlp,
    pub map: FeatureMap,
    pub epoch_losses: Vec<f64>,
}

pub fn model_id(spec: &RowSpec) -> String {
    format!(
        "{}-{}-{}-seed{}",
        if spec.config.use_bias { "bias" } else { "nobias" },
        spec.config.feature_map,
        match spec.train_variant {
            TrainVariant::Original => "X",
            TrainVariant::Symmetrized => "pmX",
        },
        spec.config.seed
    )
}

/// Builds the training set, trains, and scores on `X_test` and `-X_test`.
pub fn run_row(spec: &RowSpec, splits: &Splits) -> Result<RowResult> {
    let map = FeatureMap::new(spec.config.feature_map);
    let train_images = match spec.train_variant {
        TrainVariant::Original => splits.train.clone(),
        TrainVariant::Symmetrized => symmetrize(&splits.train),
    };
    let data = train_images.features(&map)?;
    let outcome = train(&spec.config, &data)?;
    let report = EvalReport::evaluate(
        model_id(spec),
        &outcome.model,
        &map,
        spec.train_variant.to_string(),
        data.len(),
        spec.config.seed,
        &splits.test,
    )?;
    Ok(RowResult {
        report,
        model: outcome.model,
        map,
        epoch_losses: outcome.epoch_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Table {
    /// Raw pixel features, both training variants.
    One,
    /// Inversion-invariant features, `X_train` only.
    Two,
}

/// One trained configuration of a table; each produces one or two result rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableCell {
    pub table: Table,
    pub use_bias: bool,
    pub feature_map: FeatureMapKind,
    pub train_variant: TrainVariant,
}

impl TableCell {
    /// Reference accuracies `(on X_test, on -X_test)`.
    pub fn published_values(&self) -> (f64, f64) {
        use FeatureMapKind::*;
        use TrainVariant::*;
        match (self.use_bias, self.feature_map, self.train_variant) {
            (false, Identity, Original) => (0.84, 0.001),
            (false, Identity, Symmetrized) => (0.12, 0.09),
            (true, Identity, Original) => (0.81, 0.02),
            (true, Identity, Symmetrized) => (0.68, 0.69),
            (false, Square, _) => (0.65, 0.65),
            (false, NeighborProduct, _) => (0.84, 0.84),
            (false, PermutationProduct { .. }, _) => (0.81, 0.81),
            (true, Square, _) => (0.66, 0.66),
            (true, NeighborProduct, _) => (0.87, 0.87),
            (true, PermutationProduct { .. }, _) => (0.82, 0.82),
        }
    }
}

/// The ten trained configurations: four for the raw-feature table, six for the invariant one.
pub fn table_cells(tables: &[Table], perm_seed: u64) -> Vec<TableCell> {
    let mut cells = Vec::new();
    if tables.contains(&Table::One) {
        for use_bias in [false, true] {
            for train_variant in [TrainVariant::Original, TrainVariant::Symmetrized] {
                cells.push(TableCell {
                    table: Table::One,
                    use_bias,
                    feature_map: FeatureMapKind::Identity,
                    train_variant,
                });
            }
        }
    }
    if tables.contains(&Table::Two) {
        for use_bias in [false, true] {
            for feature_map in [
                FeatureMapKind::Square,
                FeatureMapKind::NeighborProduct,
                FeatureMapKind::PermutationProduct { seed: perm_seed },
            ] {
                cells.push(TableCell {
                    table: Table::Two,
                    use_bias,
                    feature_map,
                    train_variant: TrainVariant::Original,
                });
            }
        }
    }
    cells
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub table: u8,
    pub bias_mode: String,
    pub features: String,
    pub train_set: String,
    pub test_set: String,
    pub seed: u64,
    pub accuracy: f64,
    pub published: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub cell: TableCell,
    pub report: EvalReport,
    #[serde(skip)]
    pub model: Mlp,
    #[serde(skip)]
    pub map: FeatureMap,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableReport {
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
    pub split_seed: u64,
    pub results: Vec<CellResult>,
    pub bands: Vec<BandVerdict>,
}

/// Trains every cell of `tables` for every seed. Cells run on up to `jobs` threads;
/// results are ordered by (seed, cell) regardless of scheduling.
pub fn reproduce_tables(
    tables: &[Table],
    seeds: &[u64],
    base: &TrainConfig,
    perm_seed: u64,
    splits: &Splits,
    jobs: usize,
) -> Result<TableReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let cells = table_cells(tables, perm_seed);
    let work: Vec<(u64, TableCell)> = seeds
        .iter()
        .flat_map(|&s| cells.iter().map(move |&c| (s, c)))
        .collect();
    let slots: Vec<Mutex<Option<Result<RowResult>>>> = work.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, work.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(seed, cell)) = work.get(i) else { break };
                let spec = RowSpec {
                    train_variant: cell.train_variant,
                    config: TrainConfig {
                        seed,
                        use_bias: cell.use_bias,
                        feature_map: cell.feature_map,
                        ..base.clone()
                    },
                };
                let out = run_row(&spec, splits);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(out);
            });
        }
    });
    let mut results = Vec::with_capacity(work.len());
    for ((_, cell), slot) in work.iter().zip(slots) {
        let row = slot
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .expect("every work item is claimed")?;
        results.push(CellResult {
            cell: *cell,
            report: row.report,
            model: row.model,
            map: row.map,
        });
    }
    let mut report = TableReport {
        seeds: seeds.to_vec(),
        config: base.clone(),
        split_seed: splits.split_seed,
        results,
        bands: Vec::new(),
    };
    report.bands = evaluate_bands(&report);
    Ok(report)
}

impl TableReport {
    /// Result rows: two per raw-feature cell (`X_test`, `-X_test`), one per invariant-feature cell.
    pub fn rows(&self) -> Vec<TableRow> {
        let mut rows = Vec::new();
        for res in &self.results {
            let c = &res.cell;
            let (published, published_inv) = c.published_values();
            let base = TableRow {
                table: match c.table {
                    Table::One => 1,
                    Table::Two => 2,
                },
                bias_mode: if c.use_bias { "bias" } else { "no_bias" }.into(),
                features: c.feature_map.to_string(),
                train_set: c.train_variant.to_string(),
                test_set: "X_test".into(),
                seed: res.report.seed,
                accuracy: res.report.r,
                published,
            };
            match c.table {
                Table::One => {
                    rows.push(base.clone());
                    rows.push(TableRow {
                        test_set: "-X_test".into(),
                        accuracy: res.report.r_bar,
                        published: published_inv,
                        ..base
                    });
                }
                Table::Two => rows.push(base),
            }
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,bias_mode,features,train_set,test_set,seed,accuracy,published\n");
        for r in self.rows() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.table, r.bias_mode, r.features, r.train_set, r.test_set, r.seed, r.accuracy, r.published
            ));
        }
        out
    }

    /// Reports of one cell across all seeds.
    pub fn cell_reports(&self, use_bias: bool, kind: FeatureMapKind, variant: TrainVariant) -> Vec<&EvalReport> {
        self.results
            .iter()
            .filter(|c| {
                c.cell.use_bias == use_bias
                    && c.cell.feature_map == kind
                    && c.cell.train_variant == variant
            })
            .map(|c| &c.report)
            .collect()
    }

    pub fn all_passed(&self) -> bool {
        self.bands.iter().all(|b| b.pass)
    }
}

/// Mean, min and max of a statistic over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandVerdict {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

impl BandVerdict {
    fn new(name: impl Into<String>, detail: String, pass: bool) -> Self {
        Self {
            name: name.into(),
            detail,
            pass,
        }
    }
}

/// Acceptance bands for every cell present in the report. Accuracy bands apply to the
/// mean over seeds; exact properties (bound, inversion equality, ordering) to every seed.
pub fn evaluate_bands(report: &TableReport) -> Vec<BandVerdict> {
    use FeatureMapKind::*;
    use TrainVariant::*;
    let mut out = Vec::new();
    let spread = |rs: &[&EvalReport], f: fn(&EvalReport) -> f64| Spread::of(rs.iter().map(|r| f(r)));
    let fmt = |s: Spread| format!("mean {:.4} [min {:.4}, max {:.4}]", s.mean, s.min, s.max);

    let mut band = |name: &str, rs: &[&EvalReport], f: fn(&EvalReport) -> f64, lo: f64, hi: f64| {
        if let Some(s) = spread(rs, f) {
            out.push(BandVerdict::new(
                name,
                format!("{} in [{lo}, {hi}]", fmt(s)),
                s.mean >= lo && s.mean <= hi,
            ));
        }
    };
    let r = |e: &EvalReport| e.r;
    let r_bar = |e: &EvalReport| e.r_bar;

    let nb_x = report.cell_reports(false, Identity, Original);
    band("T1 no-bias X_train R", &nb_x, r, 0.75, 1.0);
    band("T1 no-bias X_train R̄", &nb_x, r_bar, 0.0, 0.05);
    let b_x = report.cell_reports(true, Identity, Original);
    band("T1 bias X_train R", &b_x, r, 0.72, 1.0);
    band("T1 bias X_train R̄", &b_x, r_bar, 0.0, 0.10);
    let b_pm = report.cell_reports(true, Identity, Symmetrized);
    band("T1 bias ±X_train R", &b_pm, r, 0.55, 0.80);
    band("T1 bias ±X_train R̄", &b_pm, r_bar, 0.55, 0.80);
    band("T1 bias ±X_train |R-R̄|", &b_pm, |e| (e.r - e.r_bar).abs(), 0.0, 0.10);
    let nb_pm = report.cell_reports(false, Identity, Symmetrized);
    band("T1 no-bias ±X_train R", &nb_pm, r, 0.0, 0.55);
    band("T1 no-bias ±X_train R̄", &nb_pm, r_bar, 0.0, 0.55);

    let mut t2 = |bias: bool, kind: FeatureMapKind, lo: f64, hi: f64| {
        let rs = report.cell_reports(bias, kind, Original);
        let name = format!("T2 {} {} R", if bias { "bias" } else { "no-bias" }, kind.short_name());
        if let Some(s) = spread(&rs, r) {
            out.push(BandVerdict::new(
                name,
                format!("{} in [{lo}, {hi}]", fmt(s)),
                s.mean >= lo && s.mean <= hi,
            ));
        }
    };
    let perm = report
        .results
        .iter()
        .find_map(|c| matches!(c.cell.feature_map, PermutationProduct { .. }).then_some(c.cell.feature_map));
    t2(false, Square, 0.50, 0.75);
    t2(false, NeighborProduct, 0.78, 1.0);
    // bias adds capacity: the upper edges move up by 0.05
    t2(true, Square, 0.50, 0.80);
    t2(true, NeighborProduct, 0.78, 1.0);
    if let Some(p) = perm {
        t2(false, p, 0.72, 1.0);
        t2(true, p, 0.72, 1.0);
    }

    // exact, per seed
    let bounded: Vec<&EvalReport> = report.results.iter().filter_map(|c| c.report.bound.as_ref().map(|_| &c.report)).collect();
    if !bounded.is_empty() {
        let failures: Vec<&str> = bounded
            .iter()
            .filter(|r| {
                let b = r.bound.as_ref().expect("filtered");
                !b.holds || b.antisymmetry_violations > 0 || b.correct_on_both > 0
            })
            .map(|r| r.model_id.as_str())
            .collect();
        out.push(BandVerdict::new(
            "T1 R + R̄ <= 1 on every no-bias cell",
            format!("{} cells checked, failures {:?}", bounded.len(), failures),
            failures.is_empty(),
        ));
    }
    let invariant: Vec<&EvalReport> = report
        .results
        .iter()
        .filter(|c| c.cell.feature_map.is_inversion_invariant())
        .map(|c| &c.report)
        .collect();
    if !invariant.is_empty() {
        let failures: Vec<&str> = invariant
            .iter()
            .filter(|r| r.r.to_bits() != r.r_bar.to_bits() || r.test.confusion != r.test_inverted.confusion)
            .map(|r| r.model_id.as_str())
            .collect();
        out.push(BandVerdict::new(
            "T2 accuracy(X_test) == accuracy(-X_test)",
            format!("{} cells checked, failures {:?}", invariant.len(), failures),
            failures.is_empty(),
        ));
    }
    for bias in [false, true] {
        let sq = report.cell_reports(bias, Square, Original);
        let nb = report.cell_reports(bias, NeighborProduct, Original);
        if sq.is_empty() || nb.is_empty() {
            continue;
        }
        let gaps: Vec<f64> = sq
            .iter()
            .filter_map(|s| nb.iter().find(|n| n.seed == s.seed).map(|n| n.r - s.r))
            .collect();
        let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        out.push(BandVerdict::new(
            format!("T2 {} neighbor - square >= 0.08 per seed", if bias { "bias" } else { "no-bias" }),
            format!("gaps {gaps:.4?}"),
            min_gap >= 0.08,
        ));
    }
    out
}
