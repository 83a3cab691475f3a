//! Ensemble prediction analysis: per-example and per-class accuracy of two
//! groups of models, Welch's t-test with Holm–Šidák adjustment, and nested
//! factor logistic models of per-prediction correctness.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Predicted labels of several models over one shared, ordered example set.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionEnsemble {
    pub group_name: String,
    pub model_names: Vec<String>,
    predicted: Vec<Vec<usize>>,
    true_labels: Vec<usize>,
    class_count: usize,
}

impl PredictionEnsemble {
    pub fn new(
        group_name: impl Into<String>,
        model_names: Vec<String>,
        predicted: Vec<Vec<usize>>,
        true_labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if predicted.is_empty() || model_names.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} model names for {} prediction rows",
                model_names.len(),
                predicted.len()
            )));
        }
        let m = true_labels.len();
        for (name, row) in model_names.iter().zip(&predicted) {
            if row.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "model {name:?} covers {} examples, expected {m}",
                    row.len()
                )));
            }
        }
        if let Some(bad) = true_labels.iter().chain(predicted.iter().flatten()).find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            group_name: group_name.into(),
            model_names,
            predicted,
            true_labels,
            class_count,
        })
    }

    pub fn model_count(&self) -> usize {
        self.predicted.len()
    }

    pub fn example_count(&self) -> usize {
        self.true_labels.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn predicted(&self, model: usize) -> &[usize] {
        &self.predicted[model]
    }

    fn correct(&self, model: usize, example: usize) -> bool {
        self.predicted[model][example] == self.true_labels[example]
    }

    /// Stacks the models of two ensembles over the same examples.
    pub fn concat(&self, other: &PredictionEnsemble) -> Result<PredictionEnsemble> {
        same_examples(self, other)?;
        PredictionEnsemble::new(
            format!("{}+{}", self.group_name, other.group_name),
            self.model_names.iter().chain(&other.model_names).cloned().collect(),
            self.predicted.iter().chain(&other.predicted).cloned().collect(),
            self.true_labels.clone(),
            self.class_count,
        )
    }
}

fn same_examples(a: &PredictionEnsemble, b: &PredictionEnsemble) -> Result<()> {
    if a.true_labels != b.true_labels || a.class_count != b.class_count {
        return Err(Error::DimensionMismatch(format!(
            "groups {:?} and {:?} do not share examples and labels",
            a.group_name, b.group_name
        )));
    }
    Ok(())
}

/// Fraction of models that classify each example correctly.
pub fn per_example_accuracy(e: &PredictionEnsemble) -> Vec<f64> {
    let k = e.model_count() as f64;
    (0..e.example_count())
        .map(|i| (0..e.model_count()).filter(|&m| e.correct(m, i)).count() as f64 / k)
        .collect()
}

/// Accuracy of each model over the examples selected by `include`.
fn per_model_accuracy(e: &PredictionEnsemble, include: impl Fn(usize) -> bool) -> Vec<f64> {
    let idx: Vec<usize> = (0..e.example_count()).filter(|&i| include(i)).collect();
    (0..e.model_count())
        .map(|m| idx.iter().filter(|&&i| e.correct(m, i)).count() as f64 / idx.len() as f64)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum WelchDiagnostic {
    /// Both samples are constant with equal values: reported as t = 0, p = 1.
    ZeroVarianceEqualMeans,
    /// Both samples are constant with different values: t = ±∞, p = 0.
    ZeroVarianceDifferentMeans,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub diagnostic: Option<WelchDiagnostic>,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch's t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    for (name, s) in [("first", a), ("second", b)] {
        if s.len() < 2 {
            return Err(Error::TooFewExamples {
                what: "Welch's t-test sample",
                required: 2,
                actual: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} sample has non-finite values")));
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            WelchResult {
                t: 0.0,
                df,
                p: 1.0,
                diagnostic: Some(WelchDiagnostic::ZeroVarianceEqualMeans),
            }
        } else {
            WelchResult {
                t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                df,
                p: 0.0,
                diagnostic: Some(WelchDiagnostic::ZeroVarianceDifferentMeans),
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidArgument(format!("t distribution with df {df}: {e}")))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(WelchResult {
        t,
        df,
        p,
        diagnostic: None,
    })
}

/// Step-down Holm–Šidák adjusted p-values, returned in input order.
pub fn holm_sidak(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0_f64;
    for (rank, &i) in order.iter().enumerate() {
        let p = p_values[i];
        // 1 − (1 − p)^k, never below p.
        let adj = (-((m - rank) as f64 * (-p).ln_1p()).exp_m1()).max(p);
        running = running.max(adj).min(1.0);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Comparison of one subset of examples between the two groups, over the
/// per-model accuracies (mean ± SEM across models).
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupStat {
    pub example_count: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub sem_a: f64,
    pub sem_b: f64,
    /// `mean_a − mean_b`.
    pub diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub diagnostic: Option<WelchDiagnostic>,
}

impl GroupStat {
    fn compute(a: &[f64], b: &[f64], example_count: usize) -> Result<Self> {
        let w = welch_t_test(a, b)?;
        let (ma, va) = mean_var(a);
        let (mb, vb) = mean_var(b);
        Ok(Self {
            example_count,
            mean_a: ma,
            mean_b: mb,
            sem_a: (va / a.len() as f64).sqrt(),
            sem_b: (vb / b.len() as f64).sqrt(),
            diff: ma - mb,
            t: w.t,
            df: w.df,
            p_raw: w.p,
            p_adjusted: w.p,
            diagnostic: w.diagnostic,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassDiff {
    pub class: usize,
    #[serde(flatten)]
    pub stat: GroupStat,
}

/// A named grouping of classes (e.g. a synset) tested as one unit.
#[derive(Clone, Debug, PartialEq, serde::Deserialize, Serialize)]
pub struct ClassSet {
    pub name: String,
    pub classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SetDiff {
    pub name: String,
    pub classes: Vec<usize>,
    #[serde(flatten)]
    pub stat: GroupStat,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupComparison {
    pub group_a: String,
    pub group_b: String,
    pub per_example_acc_a: Vec<f64>,
    pub per_example_acc_b: Vec<f64>,
    pub overall_acc_a: f64,
    pub overall_acc_b: f64,
    pub overall_diff: f64,
    /// Classes with at least one example, ascending; p-values adjusted
    /// across this family.
    pub per_class: Vec<ClassDiff>,
    /// One entry per class set; p-values adjusted across this family.
    pub per_set: Vec<SetDiff>,
    /// Classes whose adjusted p-value is below 0.05.
    pub significant_classes: usize,
}

fn adjust<T>(items: &mut [T], stat: impl Fn(&mut T) -> &mut GroupStat) -> Result<()> {
    let raw: Vec<f64> = items.iter_mut().map(|i| stat(i).p_raw).collect();
    for (item, adj) in items.iter_mut().zip(holm_sidak(&raw)?) {
        stat(item).p_adjusted = adj;
    }
    Ok(())
}

/// Per-class and per-class-set comparison of two groups of models
/// evaluated on the same examples.
pub fn class_level_comparison(
    a: &PredictionEnsemble,
    b: &PredictionEnsemble,
    class_sets: &[ClassSet],
) -> Result<GroupComparison> {
    same_examples(a, b)?;
    for e in [a, b] {
        if e.model_count() < 2 {
            return Err(Error::TooFewExamples {
                what: "models per group for class-level tests",
                required: 2,
                actual: e.model_count(),
            });
        }
    }
    let labels = a.true_labels();
    let mut counts = vec![0usize; a.class_count];
    for &l in labels {
        counts[l] += 1;
    }

    let mut per_class = Vec::new();
    for (class, &n) in counts.iter().enumerate().filter(|(_, &n)| n > 0) {
        let acc_a = per_model_accuracy(a, |i| labels[i] == class);
        let acc_b = per_model_accuracy(b, |i| labels[i] == class);
        per_class.push(ClassDiff {
            class,
            stat: GroupStat::compute(&acc_a, &acc_b, n)?,
        });
    }
    adjust(&mut per_class, |c| &mut c.stat)?;

    let mut per_set = Vec::new();
    for set in class_sets {
        if let Some(bad) = set.classes.iter().find(|&&c| c >= a.class_count) {
            return Err(Error::InvalidArgument(format!(
                "class set {:?} names class {bad} of {}",
                set.name, a.class_count
            )));
        }
        let n: usize = set.classes.iter().map(|&c| counts[c]).sum();
        if n == 0 {
            return Err(Error::InvalidArgument(format!(
                "class set {:?} has no examples (empty class)",
                set.name
            )));
        }
        let member = |i: usize| set.classes.contains(&labels[i]);
        let acc_a = per_model_accuracy(a, member);
        let acc_b = per_model_accuracy(b, member);
        per_set.push(SetDiff {
            name: set.name.clone(),
            classes: set.classes.clone(),
            stat: GroupStat::compute(&acc_a, &acc_b, n)?,
        });
    }
    adjust(&mut per_set, |s| &mut s.stat)?;

    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let overall_acc_a = mean(per_model_accuracy(a, |_| true));
    let overall_acc_b = mean(per_model_accuracy(b, |_| true));
    let significant_classes = per_class.iter().filter(|c| c.stat.p_adjusted < 0.05).count();
    Ok(GroupComparison {
        group_a: a.group_name.clone(),
        group_b: b.group_name.clone(),
        per_example_acc_a: per_example_accuracy(a),
        per_example_acc_b: per_example_accuracy(b),
        overall_acc_a,
        overall_acc_b,
        overall_diff: overall_acc_a - overall_acc_b,
        per_class,
        per_set,
        significant_classes,
    })
}

/// Which factors explain per-prediction correctness:
///
/// - `A`: example + group
/// - `B`: example + group × class
/// - `C`: example × group (saturated in cells)
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FactorModelId {
    A,
    B,
    C,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FactorFitOptions {
    /// L2 penalty on all coefficients; keeps separated cells finite.
    pub ridge: f64,
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FactorFitOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            gradient_tolerance: 1e-6,
            max_iterations: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FactorModelFit {
    pub model_id: FactorModelId,
    /// `Σ (yᵢ − πᵢ)² / n` over every (model, example) prediction.
    pub residual_variance: f64,
    pub aic: f64,
    pub log_likelihood: f64,
    pub deviance: f64,
    /// Identifiable coefficients (one reference level dropped per factor).
    pub coefficient_count: usize,
    pub observation_count: usize,
    pub ridge: f64,
    /// (example, group) cells whose outcomes are all 0 or all 1.
    pub separated_cells: usize,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Binomial counts for one (example, group) cell.
#[derive(Clone, Copy)]
struct Cell {
    trials: f64,
    successes: f64,
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic model over cells with linear predictor
/// `η(e, 0) = αₑ`, `η(e, 1) = αₑ + θ_{t(e)}`.
struct CellModel {
    /// `[group 0, group 1]` per example.
    cells: Vec<[Cell; 2]>,
    /// Index of the group-effect coefficient for each example.
    theta_of: Vec<usize>,
    theta_count: usize,
    ridge: f64,
}

impl CellModel {
    fn eta(&self, alpha: &[f64], theta: &[f64], e: usize) -> [f64; 2] {
        [alpha[e], alpha[e] + theta[self.theta_of[e]]]
    }

    fn log_likelihood(&self, alpha: &[f64], theta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for (e, cells) in self.cells.iter().enumerate() {
            for (cell, eta) in cells.iter().zip(self.eta(alpha, theta, e)) {
                // s·ln π + (n − s)·ln(1 − π)
                ll -= cell.successes * softplus(-eta) + (cell.trials - cell.successes) * softplus(eta);
            }
        }
        ll
    }

    fn penalized(&self, alpha: &[f64], theta: &[f64]) -> f64 {
        let sq: f64 = alpha.iter().chain(theta).map(|v| v * v).sum();
        self.log_likelihood(alpha, theta) - 0.5 * self.ridge * sq
    }

    fn fit(&self, opts: &FactorFitOptions) -> (Vec<f64>, Vec<f64>, usize, f64, bool) {
        let e_count = self.cells.len();
        let mut alpha: Vec<f64> = self
            .cells
            .iter()
            .map(|c| {
                let p = (c[0].successes + c[1].successes + 0.5) / (c[0].trials + c[1].trials + 1.0);
                (p / (1.0 - p)).ln()
            })
            .collect();
        let mut theta = vec![0.0; self.theta_count];

        let mut g_alpha = vec![0.0; e_count];
        let mut h_alpha = vec![0.0; e_count];
        let mut coupling = vec![0.0; e_count];
        let mut g_theta = vec![0.0; self.theta_count];
        let mut h_theta = vec![0.0; self.theta_count];

        let mut objective = self.penalized(&alpha, &theta);
        let mut grad_norm = f64::INFINITY;
        for iter in 0..opts.max_iterations {
            g_theta.iter_mut().for_each(|g| *g = 0.0);
            h_theta.iter_mut().for_each(|h| *h = self.ridge);
            for e in 0..e_count {
                let eta = self.eta(&alpha, &theta, e);
                let mut g = -self.ridge * alpha[e];
                let mut h = self.ridge;
                for (k, (cell, eta)) in self.cells[e].iter().zip(eta).enumerate() {
                    let pi = sigmoid(eta);
                    let resid = cell.successes - cell.trials * pi;
                    let w = cell.trials * pi * (1.0 - pi);
                    g += resid;
                    h += w;
                    if k == 1 {
                        let t = self.theta_of[e];
                        g_theta[t] += resid;
                        h_theta[t] += w;
                        coupling[e] = w;
                    }
                }
                g_alpha[e] = g;
                h_alpha[e] = h;
            }
            for (g, th) in g_theta.iter_mut().zip(&theta) {
                *g -= self.ridge * th;
            }
            grad_norm = g_alpha.iter().chain(&g_theta).map(|g| g * g).sum::<f64>().sqrt();
            if grad_norm < opts.gradient_tolerance {
                return (alpha, theta, iter, grad_norm, true);
            }

            // Newton direction. Each αₑ couples to exactly one θ, so the
            // Schur complement on θ is diagonal.
            let mut schur = h_theta.clone();
            let mut rhs = g_theta.clone();
            for e in 0..e_count {
                let t = self.theta_of[e];
                schur[t] -= coupling[e] * coupling[e] / h_alpha[e];
                rhs[t] -= coupling[e] * g_alpha[e] / h_alpha[e];
            }
            let d_theta: Vec<f64> = rhs.iter().zip(&schur).map(|(r, s)| r / s).collect();
            let d_alpha: Vec<f64> = (0..e_count)
                .map(|e| (g_alpha[e] - coupling[e] * d_theta[self.theta_of[e]]) / h_alpha[e])
                .collect();

            // Backtracking on the penalized log-likelihood.
            let mut step = 1.0;
            loop {
                let cand_a: Vec<f64> = alpha.iter().zip(&d_alpha).map(|(a, d)| a + step * d).collect();
                let cand_t: Vec<f64> = theta.iter().zip(&d_theta).map(|(a, d)| a + step * d).collect();
                let cand = self.penalized(&cand_a, &cand_t);
                if cand >= objective || step < 1e-10 {
                    if cand >= objective {
                        alpha = cand_a;
                        theta = cand_t;
                        objective = cand;
                    }
                    break;
                }
                step *= 0.5;
            }
            if step < 1e-10 {
                // No ascent possible at working precision.
                return (alpha, theta, iter + 1, grad_norm, false);
            }
        }
        (alpha, theta, opts.max_iterations, grad_norm, false)
    }
}

/// Fits one of the nested factor models with default options.
pub fn fit_factor_model(a: &PredictionEnsemble, b: &PredictionEnsemble, model: FactorModelId) -> Result<FactorModelFit> {
    fit_factor_model_with(a, b, model, &FactorFitOptions::default())
}

/// Logistic regression of per-prediction correctness on one-hot factors.
/// Group `a` is the reference level of the group factor.
pub fn fit_factor_model_with(
    a: &PredictionEnsemble,
    b: &PredictionEnsemble,
    model: FactorModelId,
    opts: &FactorFitOptions,
) -> Result<FactorModelFit> {
    same_examples(a, b)?;
    let labels = a.true_labels();
    let e_count = labels.len();
    if e_count == 0 {
        return Err(Error::TooFewExamples {
            what: "factor model examples",
            required: 1,
            actual: 0,
        });
    }
    let cell = |ens: &PredictionEnsemble, e: usize| Cell {
        trials: ens.model_count() as f64,
        successes: (0..ens.model_count()).filter(|&m| ens.correct(m, e)).count() as f64,
    };
    let cells: Vec<[Cell; 2]> = (0..e_count).map(|e| [cell(a, e), cell(b, e)]).collect();

    let (theta_of, theta_count) = match model {
        FactorModelId::A => (vec![0; e_count], 1),
        FactorModelId::B => {
            // Dense re-indexing of the classes that actually occur.
            let mut index = vec![usize::MAX; a.class_count()];
            let mut next = 0;
            let of = labels
                .iter()
                .map(|&c| {
                    if index[c] == usize::MAX {
                        index[c] = next;
                        next += 1;
                    }
                    index[c]
                })
                .collect();
            (of, next)
        }
        FactorModelId::C => ((0..e_count).collect(), e_count),
    };

    let model_def = CellModel {
        cells,
        theta_of,
        theta_count,
        ridge: opts.ridge,
    };
    let (alpha, theta, iterations, gradient_norm, converged) = model_def.fit(opts);
    if !converged {
        log::warn!("factor model {model:?} stopped at gradient norm {gradient_norm:e} after {iterations} iterations");
    }

    let mut sq = 0.0;
    let mut n_obs = 0.0;
    let mut separated = 0;
    for (e, cells) in model_def.cells.iter().enumerate() {
        for (c, eta) in cells.iter().zip(model_def.eta(&alpha, &theta, e)) {
            let pi = sigmoid(eta);
            sq += c.successes * (1.0 - pi) * (1.0 - pi) + (c.trials - c.successes) * pi * pi;
            n_obs += c.trials;
            if c.trials > 0.0 && (c.successes == 0.0 || c.successes == c.trials) {
                separated += 1;
            }
        }
    }
    let log_likelihood = model_def.log_likelihood(&alpha, &theta);
    let k = e_count + theta_count;
    Ok(FactorModelFit {
        model_id: model,
        residual_variance: sq / n_obs,
        aic: 2.0 * k as f64 - 2.0 * log_likelihood,
        log_likelihood,
        deviance: -2.0 * log_likelihood,
        coefficient_count: k,
        observation_count: n_obs as usize,
        ridge: opts.ridge,
        separated_cells: separated,
        iterations,
        gradient_norm,
        converged,
    })
}

/// `Var_A − Var_C` at or below this fraction of `Var_A` means there is no
/// example × group signal to explain.
const PSEUDO_R2_RTOL: f64 = 1e-9;

/// Efron-style `(Var_A − Var_B) / (Var_A − Var_C)`: the share of the
/// example × group variability that the group × class factor captures.
pub fn pseudo_r_squared(fit_a: &FactorModelFit, fit_b: &FactorModelFit, fit_c: &FactorModelFit) -> Result<f64> {
    for (fit, want) in [(fit_a, FactorModelId::A), (fit_b, FactorModelId::B), (fit_c, FactorModelId::C)] {
        if fit.model_id != want {
            return Err(Error::InvalidArgument(format!(
                "expected a model {want:?} fit, got {:?}",
                fit.model_id
            )));
        }
    }
    if fit_a.observation_count != fit_b.observation_count || fit_a.observation_count != fit_c.observation_count {
        return Err(Error::DimensionMismatch("fits cover different observations".into()));
    }
    let (va, vb, vc) = (fit_a.residual_variance, fit_b.residual_variance, fit_c.residual_variance);
    let denom = va - vc;
    if denom <= PSEUDO_R2_RTOL * va {
        return Err(Error::Degenerate(format!(
            "Var_A − Var_C = {denom:e}: no example × group signal"
        )));
    }
    Ok((va - vb) / denom)
}
