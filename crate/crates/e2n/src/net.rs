//! The error-estimation network: a 32-64-1 fully connected net with a
//! sigmoid hidden layer and linear output, trained with Adam on mean-square
//! error. Inputs are always arctangent-compressed; targets optionally so,
//! with the inverse applied at inference.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dwr::{coarse_indicator, IndicatorField};
use crate::error::{Error, Result};
use crate::features::{extract_features, preprocess, Dataset, FEATURE_COUNT};
use crate::fem::Field;
use crate::model::FlowProblem;

pub const INPUT_DIM: usize = FEATURE_COUNT;
pub const HIDDEN_DIM: usize = 64;

/// Training hyperparameters. The defaults are the published configuration:
/// learning rate 1e-3, 2000 epochs, batches of 500, a 7:3 split and Adam.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub arctan_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 2000,
            batch_size: 500,
            train_fraction: 0.7,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            arctan_targets: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0
            && self.epochs > 0
            && self.batch_size > 0
            && self.train_fraction > 0.0
            && self.train_fraction < 1.0)
        {
            return Err(Error::invalid("training configuration must be positive"));
        }
        Ok(())
    }
}

/// The feed-forward network: out = W2 sigmoid(W1 x + b1) + b2.
#[derive(Debug, Clone)]
pub struct Mlp {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: f64,
    /// Whether targets were arctangent-compressed during training; inference
    /// then applies the tangent to undo it.
    pub arctan_targets: bool,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Mlp {
    /// Uniform initialisation within +-sqrt(6/(fan_in + fan_out)), zero
    /// biases; deterministic for a given seed.
    pub fn init(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
        };
        Mlp {
            w1: glorot(HIDDEN_DIM, INPUT_DIM),
            b1: Array1::zeros(HIDDEN_DIM),
            w2: glorot(1, HIDDEN_DIM),
            b2: 0.0,
            arctan_targets: true,
        }
    }

    pub fn weight_bound(rows: usize, cols: usize) -> f64 {
        (6.0 / (rows + cols) as f64).sqrt()
    }

    /// Network outputs for a batch of preprocessed rows (one per row).
    pub fn forward(&self, batch: &Array2<f64>) -> Result<Array1<f64>> {
        if batch.ncols() != INPUT_DIM {
            return Err(Error::invalid(format!(
                "expected {} inputs per row, got {}",
                INPUT_DIM,
                batch.ncols()
            )));
        }
        let hidden = self.hidden(batch);
        Ok(self.output(&hidden))
    }

    fn hidden(&self, batch: &Array2<f64>) -> Array2<f64> {
        let mut h = batch.dot(&self.w1.t());
        h += &self.b1;
        h.mapv_inplace(sigmoid);
        h
    }

    fn output(&self, hidden: &Array2<f64>) -> Array1<f64> {
        let mut out = hidden.dot(&self.w2.t()).remove_axis(Axis(1));
        out += self.b2;
        out
    }

    pub fn weights(&self) -> (&Array2<f64>, &Array1<f64>, &Array2<f64>, f64) {
        (&self.w1, &self.b1, &self.w2, self.b2)
    }

    pub fn weights_mut(&mut self) -> (&mut Array2<f64>, &mut Array1<f64>, &mut Array2<f64>, &mut f64) {
        (&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2)
    }
}

/// Parameter-shaped bundle used for gradients and Adam moments.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: f64,
}

impl ParamGrads {
    fn zeros() -> Self {
        ParamGrads {
            w1: Array2::zeros((HIDDEN_DIM, INPUT_DIM)),
            b1: Array1::zeros(HIDDEN_DIM),
            w2: Array2::zeros((1, HIDDEN_DIM)),
            b2: 0.0,
        }
    }
}

/// Exact backpropagation gradients of the batch mean-square error.
pub fn gradient(mlp: &Mlp, batch: &Array2<f64>, targets: &Array1<f64>) -> Result<ParamGrads> {
    if batch.nrows() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows vs {} targets",
            batch.nrows(),
            targets.len()
        )));
    }
    let n = batch.nrows() as f64;
    let hidden = mlp.hidden(batch);
    let pred = mlp.output(&hidden);

    // dL/dpred for L = (1/N) sum (pred - y)^2
    let dpred = (&pred - targets) * (2.0 / n);

    let dw2 = dpred
        .view()
        .insert_axis(Axis(0))
        .dot(&hidden)
        .into_shape_with_order((1, HIDDEN_DIM))
        .expect("1 x hidden");
    let db2 = dpred.sum();

    // back through the output layer and the sigmoid
    let dhidden_lin = {
        let mut d = dpred.insert_axis(Axis(1)).dot(&mlp.w2);
        d.zip_mut_with(&hidden, |g, &s| *g *= s * (1.0 - s));
        d
    };
    let dw1 = dhidden_lin.t().dot(batch);
    let db1 = dhidden_lin.sum_axis(Axis(0));

    Ok(ParamGrads { w1: dw1, b1: db1, w2: dw2, b2: db2 })
}

/// Mean-square error of the network on (already preprocessed) data.
pub fn mse(mlp: &Mlp, batch: &Array2<f64>, targets: &Array1<f64>) -> Result<f64> {
    let pred = mlp.forward(batch)?;
    let diff = &pred - targets;
    Ok(diff.mapv(|d| d * d).sum() / targets.len().max(1) as f64)
}

/// First and second moment accumulators with the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ParamGrads,
    v: ParamGrads,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState { m: ParamGrads::zeros(), v: ParamGrads::zeros(), step: 0, beta1, beta2, epsilon }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn adam_update_scalar(m: &mut f64, v: &mut f64, g: f64, state_step: f64, s: &AdamState, lr: f64) -> f64 {
    *m = s.beta1 * *m + (1.0 - s.beta1) * g;
    *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
    let m_hat = *m / (1.0 - s.beta1.powf(state_step));
    let v_hat = *v / (1.0 - s.beta2.powf(state_step));
    -lr * m_hat / (v_hat.sqrt() + s.epsilon)
}

/// Standard bias-corrected Adam update, applied in place.
pub fn adam_step(state: &mut AdamState, mlp: &mut Mlp, grads: &ParamGrads, lr: f64) {
    state.step += 1;
    let t = state.step as f64;
    let snapshot = AdamState {
        m: ParamGrads::zeros(),
        v: ParamGrads::zeros(),
        step: state.step,
        beta1: state.beta1,
        beta2: state.beta2,
        epsilon: state.epsilon,
    };

    for ((p, g), (m, v)) in mlp
        .w1
        .iter_mut()
        .zip(grads.w1.iter())
        .zip(state.m.w1.iter_mut().zip(state.v.w1.iter_mut()))
    {
        *p += adam_update_scalar(m, v, *g, t, &snapshot, lr);
    }
    for ((p, g), (m, v)) in mlp
        .b1
        .iter_mut()
        .zip(grads.b1.iter())
        .zip(state.m.b1.iter_mut().zip(state.v.b1.iter_mut()))
    {
        *p += adam_update_scalar(m, v, *g, t, &snapshot, lr);
    }
    for ((p, g), (m, v)) in mlp
        .w2
        .iter_mut()
        .zip(grads.w2.iter())
        .zip(state.m.w2.iter_mut().zip(state.v.w2.iter_mut()))
    {
        *p += adam_update_scalar(m, v, *g, t, &snapshot, lr);
    }
    mlp.b2 += adam_update_scalar(&mut state.m.b2, &mut state.v.b2, grads.b2, t, &snapshot, lr);
}

/// Per-epoch loss history of a training run, plus the split bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// Dataset row indices of the validation split.
    pub val_indices: Vec<usize>,
}

/// Converts dataset rows to the network's preprocessed representation.
pub fn design_matrix(dataset: &Dataset, arctan_targets: bool) -> (Array2<f64>, Array1<f64>) {
    let n = dataset.len();
    let mut x = Array2::zeros((n, INPUT_DIM));
    let mut y = Array1::zeros(n);
    for (i, row) in dataset.rows.iter().enumerate() {
        let pre = preprocess(row.features.as_slice());
        for (j, v) in pre.iter().enumerate() {
            x[(i, j)] = *v;
        }
        y[i] = if arctan_targets { row.target.atan() } else { row.target };
    }
    (x, y)
}

/// Trains the network: a seeded shuffled 7:3 split, minibatch Adam for the
/// configured number of epochs, and full train/validation MSE recorded per
/// epoch.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(Mlp, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let (x, y) = design_matrix(dataset, config.arctan_targets);
    let n = dataset.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let n_train = ((n as f64) * config.train_fraction).round().max(1.0) as usize;
    let n_train = n_train.min(n.saturating_sub(1)).max(1);
    let (train_idx, val_idx) = indices.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let select = |idx: &[usize]| -> (Array2<f64>, Array1<f64>) {
        let mut bx = Array2::zeros((idx.len(), INPUT_DIM));
        let mut by = Array1::zeros(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            bx.row_mut(r).assign(&x.row(i));
            by[r] = y[i];
        }
        (bx, by)
    };
    let (train_x, train_y) = select(&train_idx);
    let (val_x, val_y) = select(&val_idx);

    let mut mlp = Mlp::init(config.seed);
    mlp.arctan_targets = config.arctan_targets;
    let mut adam = AdamState::new(config.beta1, config.beta2, config.epsilon);

    let mut report = TrainReport {
        train_mse: Vec::with_capacity(config.epochs + 1),
        val_mse: Vec::with_capacity(config.epochs + 1),
        val_indices: val_idx,
    };
    // Epoch 0: losses at initialisation.
    report.train_mse.push(mse(&mlp, &train_x, &train_y)?);
    report.val_mse.push(mse(&mlp, &val_x, &val_y)?);

    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut bx = Array2::zeros((chunk.len(), INPUT_DIM));
            let mut by = Array1::zeros(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                bx.row_mut(r).assign(&train_x.row(i));
                by[r] = train_y[i];
            }
            let grads = gradient(&mlp, &bx, &by)?;
            adam_step(&mut adam, &mut mlp, &grads, config.learning_rate);
        }
        report.train_mse.push(mse(&mlp, &train_x, &train_y)?);
        report.val_mse.push(mse(&mlp, &val_x, &val_y)?);
    }
    train_idx.sort_unstable();
    Ok((mlp, report))
}

/// Clamp for inverting the arctangent target compression; keeps the tangent
/// finite when the network output drifts past +-pi/2.
const TAN_CLAMP: f64 = std::f64::consts::FRAC_PI_2 - 1e-6;

/// Drop-in replacement for the enrichment-based indicator: extract features,
/// preprocess, run the network, and undo the target transform. No refined
/// mesh or enriched solve is constructed anywhere on this path.
pub fn predict_indicator(
    mlp: &Mlp,
    problem: &FlowProblem,
    u_h: &Field,
    u_star_h: &Field,
) -> Result<IndicatorField> {
    let coarse = coarse_indicator(problem, u_h, u_star_h)?;
    let rows = extract_features(problem, u_h, u_star_h, &coarse)?;
    let mut x = Array2::zeros((rows.len(), INPUT_DIM));
    for (i, row) in rows.iter().enumerate() {
        let pre = preprocess(row.as_slice());
        for (j, v) in pre.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let out = mlp.forward(&x)?;
    let values = out
        .iter()
        .map(|&v| {
            if mlp.arctan_targets {
                v.clamp(-TAN_CLAMP, TAN_CLAMP).tan()
            } else {
                v
            }
        })
        .collect();
    IndicatorField::new(coarse.mesh().clone(), values)
}

/// Spearman rank correlation between two samples.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).expect("finite values"));
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let ra = rank(a);
    let rb = rank(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        let (xa, xb) = (ra[i] - mean, rb[i] - mean);
        num += xa * xb;
        da += xa * xa;
        db += xb * xb;
    }
    num / (da.sqrt() * db.sqrt()).max(f64::MIN_POSITIVE)
}

/// Writes the checkpoint format: `E2NNET 1`, `dims 32 64 1`,
/// `arctan_targets 0|1`, then W1 row-major (64 lines of 32), b1 on one line,
/// W2 on one line, b2 on one line, full-precision decimals.
pub fn save(mlp: &Mlp, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("E2NNET 1\n");
    out.push_str(&format!("dims {INPUT_DIM} {HIDDEN_DIM} 1\n"));
    out.push_str(&format!("arctan_targets {}\n", u8::from(mlp.arctan_targets)));
    for row in mlp.w1.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let b1: Vec<String> = mlp.b1.iter().map(|v| format!("{v}")).collect();
    out.push_str(&b1.join(" "));
    out.push('\n');
    let w2: Vec<String> = mlp.w2.iter().map(|v| format!("{v}")).collect();
    out.push_str(&w2.join(" "));
    out.push('\n');
    out.push_str(&format!("{}\n", mlp.b2));
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Mlp> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(Error::parse(i + 1, e.to_string())),
            None => Err(Error::parse(0, format!("unexpected end of file reading {what}"))),
        }
    };

    let (ln, header) = next("header")?;
    if header.trim() != "E2NNET 1" {
        return Err(Error::parse(ln, format!("expected `E2NNET 1`, got `{header}`")));
    }
    let (ln, dims) = next("dims")?;
    let expect = format!("dims {INPUT_DIM} {HIDDEN_DIM} 1");
    if dims.trim() != expect {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint dims `{}` do not match `{}` (line {ln})",
            dims.trim(),
            expect
        )));
    }
    let (ln, flag) = next("arctan_targets")?;
    let arctan_targets = match flag.trim() {
        "arctan_targets 0" => false,
        "arctan_targets 1" => true,
        other => return Err(Error::parse(ln, format!("bad flag line `{other}`"))),
    };

    let parse_row = |ln: usize, line: &str, want: usize| -> Result<Vec<f64>> {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| Error::parse(ln, format!("weight: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != want {
            return Err(Error::parse(ln, format!("expected {want} values, got {}", vals.len())));
        }
        Ok(vals)
    };

    let mut w1 = Array2::zeros((HIDDEN_DIM, INPUT_DIM));
    for r in 0..HIDDEN_DIM {
        let (ln, line) = next("W1 row")?;
        let vals = parse_row(ln, &line, INPUT_DIM)?;
        for (c, v) in vals.into_iter().enumerate() {
            w1[(r, c)] = v;
        }
    }
    let (ln, line) = next("b1")?;
    let b1 = Array1::from_vec(parse_row(ln, &line, HIDDEN_DIM)?);
    let (ln, line) = next("W2")?;
    let w2 = Array2::from_shape_vec((1, HIDDEN_DIM), parse_row(ln, &line, HIDDEN_DIM)?)
        .expect("row shape");
    let (ln, line) = next("b2")?;
    let b2 = parse_row(ln, &line, 1)?[0];

    Ok(Mlp { w1, b1, w2, b2, arctan_targets })
}

/// Convenience: load a checkpoint behind an `Arc` for sharing across runs.
pub fn load_shared(path: &Path) -> Result<Arc<Mlp>> {
    Ok(Arc::new(load(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{DatasetRow, FeatureVector};
    use ndarray::array;

    #[test]
    fn init_deterministic_and_bounded() {
        let a = Mlp::init(42);
        let b = Mlp::init(42);
        assert_eq!(a.w1, b.w1);
        assert_eq!(a.w2, b.w2);
        assert_eq!(a.w1.dim(), (64, 32));
        assert_eq!(a.w2.dim(), (1, 64));
        let bound1 = Mlp::weight_bound(HIDDEN_DIM, INPUT_DIM);
        assert!(a.w1.iter().all(|v| v.abs() <= bound1));
        let bound2 = Mlp::weight_bound(1, HIDDEN_DIM);
        assert!(a.w2.iter().all(|v| v.abs() <= bound2));
        assert!(a.b1.iter().all(|&v| v == 0.0));
        assert_eq!(a.b2, 0.0);
        let c = Mlp::init(43);
        assert_ne!(a.w1, c.w1);
    }

    #[test]
    fn forward_closed_forms() {
        let mut mlp = Mlp::init(1);
        {
            let (w1, b1, w2, b2) = mlp.weights_mut();
            w1.fill(0.0);
            b1.fill(0.0);
            w2.fill(0.0);
            *b2 = 0.0;
        }
        let x = Array2::zeros((3, INPUT_DIM));
        let out = mlp.forward(&x).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        // One live hidden unit: w1 row of ones, w2 entry 1 -> sigmoid(0) = 0.5.
        {
            let (w1, _, w2, _) = mlp.weights_mut();
            for c in 0..INPUT_DIM {
                w1[(0, c)] = 1.0;
            }
            w2[(0, 0)] = 1.0;
        }
        let out = mlp.forward(&Array2::zeros((1, INPUT_DIM))).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15);

        // Rows are independent.
        let mut x = Array2::zeros((2, INPUT_DIM));
        x[(1, 0)] = 2.0;
        let out = mlp.forward(&x).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15);
        assert!((out[1] - sigmoid(2.0)).abs() < 1e-15);

        let bad = Array2::zeros((2, 7));
        assert!(mlp.forward(&bad).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mlp = Mlp::init(7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((10, INPUT_DIM), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(10, |_| rng.random_range(-1.0..1.0));
        let grads = gradient(&mlp, &x, &y).unwrap();

        let eps = 1e-6;
        let mut worst = 0.0f64;
        let mut check = |get: &dyn Fn(&Mlp) -> f64, set: &dyn Fn(&mut Mlp, f64), analytic: f64| {
            let mut p = mlp.clone();
            let v0 = get(&p);
            set(&mut p, v0 + eps);
            let up = mse(&p, &x, &y).unwrap();
            set(&mut p, v0 - eps);
            let dn = mse(&p, &x, &y).unwrap();
            let fd = (up - dn) / (2.0 * eps);
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            worst = worst.max((fd - analytic).abs() / denom);
        };
        for r in (0..HIDDEN_DIM).step_by(7) {
            for c in (0..INPUT_DIM).step_by(5) {
                check(
                    &|m| m.w1[(r, c)],
                    &|m, v| m.w1[(r, c)] = v,
                    grads.w1[(r, c)],
                );
            }
            check(&|m| m.b1[r], &|m, v| m.b1[r] = v, grads.b1[r]);
            check(&|m| m.w2[(0, r)], &|m, v| m.w2[(0, r)] = v, grads.w2[(0, r)]);
        }
        check(&|m| m.b2, &|m, v| m.b2 = v, grads.b2);
        assert!(worst < 1e-6, "worst relative gradient error {worst:.3e}");
    }

    #[test]
    fn gradient_zero_at_exact_fit() {
        let mut mlp = Mlp::init(3);
        {
            let (w1, b1, w2, b2) = mlp.weights_mut();
            w1.fill(0.0);
            b1.fill(0.0);
            w2.fill(0.0);
            *b2 = 1.25;
        }
        let x = Array2::zeros((4, INPUT_DIM));
        let y = Array1::from_elem(4, 1.25);
        let g = gradient(&mlp, &x, &y).unwrap();
        assert!(g.w1.iter().all(|&v| v == 0.0));
        assert!(g.b2 == 0.0);

        // dMSE/db2 is linear in the residual offset.
        let y2 = Array1::from_elem(4, 1.25 - 3.0);
        let g2 = gradient(&mlp, &x, &y2).unwrap();
        let y1 = Array1::from_elem(4, 1.25 - 1.0);
        let g1 = gradient(&mlp, &x, &y1).unwrap();
        assert!((g2.b2 - 3.0 * g1.b2).abs() < 1e-12 * g2.b2.abs());
    }

    #[test]
    fn adam_first_steps_and_golden_sequence() {
        // Constant unit gradient: bias correction makes each of the first
        // steps length lr/(1 + eps), so param_t = -t * lr / (1 + 1e-8).
        let mut mlp = Mlp::init(5);
        {
            let (w1, b1, w2, b2) = mlp.weights_mut();
            w1.fill(0.0);
            b1.fill(0.0);
            w2.fill(0.0);
            *b2 = 0.0;
        }
        let mut state = AdamState::new(0.9, 0.999, 1e-8);
        let mut g = ParamGrads::zeros();
        g.b2 = 1.0;
        adam_step(&mut state, &mut mlp, &g, 0.1);
        let expect1 = -0.1 / (1.0 + 1e-8);
        assert!((mlp.b2 - expect1).abs() < 1e-15, "{} vs {expect1}", mlp.b2);
        adam_step(&mut state, &mut mlp, &g, 0.1);
        let expect2 = -0.2 / (1.0 + 1e-8);
        assert!((mlp.b2 - expect2).abs() < 1e-14, "{} vs {expect2}", mlp.b2);
        assert_eq!(state.step_count(), 2);

        // Zero gradient from a fresh state leaves parameters unchanged.
        let mut mlp2 = Mlp::init(6);
        let before = mlp2.clone();
        let mut state2 = AdamState::new(0.9, 0.999, 1e-8);
        adam_step(&mut state2, &mut mlp2, &ParamGrads::zeros(), 0.1);
        assert_eq!(mlp2.w1, before.w1);
        assert_eq!(mlp2.b2, before.b2);

        // First-step magnitude is near lr regardless of gradient scale.
        let mut mlp3 = Mlp::init(7);
        let b2_before = mlp3.b2;
        let mut state3 = AdamState::new(0.9, 0.999, 1e-8);
        let mut tiny = ParamGrads::zeros();
        tiny.b2 = 1e-6;
        adam_step(&mut state3, &mut mlp3, &tiny, 0.1);
        let step = (mlp3.b2 - b2_before).abs();
        assert!(step > 0.098 && step <= 0.1, "step {step}");
    }

    fn synthetic_dataset(n: usize) -> Dataset {
        let mut rows = Vec::with_capacity(n);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..n {
            let mut f = [0.0; FEATURE_COUNT];
            for v in f.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            // Target linear in the coarse-indicator column.
            let target = 0.8 * f[0] + 0.05;
            rows.push(DatasetRow { scenario: 0, iteration: 0, features: FeatureVector(f), target });
        }
        Dataset { rows }
    }

    #[test]
    fn training_fits_linear_target() {
        let ds = synthetic_dataset(100);
        let config = TrainConfig { epochs: 400, batch_size: 32, seed: 12, ..Default::default() };
        let (_, report) = train(&ds, &config).unwrap();
        let first = report.train_mse[0];
        let last = *report.train_mse.last().unwrap();
        assert!(last < 0.01 * first, "train MSE {first} -> {last}");

        // Same seed, same history.
        let (_, report2) = train(&ds, &config).unwrap();
        assert_eq!(report.train_mse, report2.train_mse);
        assert_eq!(report.val_mse, report2.val_mse);
    }

    #[test]
    fn training_rejects_empty_dataset() {
        let ds = Dataset::default();
        assert!(matches!(
            train(&ds, &TrainConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let mut mlp = Mlp::init(21);
        mlp.arctan_targets = false;
        let dir = std::env::temp_dir().join(format!("e2n-net-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.ckpt");
        save(&mlp, &path).unwrap();
        let r = load(&path).unwrap();
        assert_eq!(mlp.w1, r.w1);
        assert_eq!(mlp.b1, r.b1);
        assert_eq!(mlp.w2, r.w2);
        assert_eq!(mlp.b2, r.b2);
        assert_eq!(r.arctan_targets, false);

        // Bit-exact forward agreement on a fixed batch.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((5, INPUT_DIM), |_| rng.random_range(-1.0..1.0));
        assert_eq!(mlp.forward(&x).unwrap(), r.forward(&x).unwrap());

        // Truncation -> parse error.
        let text = std::fs::read_to_string(&path).unwrap();
        let cut: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        std::fs::write(&path, cut).unwrap();
        assert!(matches!(load(&path), Err(Error::Parse { .. })));

        // Wrong dims -> dimension mismatch.
        std::fs::write(&path, "E2NNET 1\ndims 16 8 1\narctan_targets 1\n").unwrap();
        assert!(matches!(load(&path), Err(Error::DimensionMismatch(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[5.0, 0.0, -5.0]) + 1.0).abs() < 1e-12);
        // Monotone transform leaves it unchanged.
        let a: [f64; 5] = [0.3, -1.2, 7.0, 0.01, 2.0];
        let b: Vec<f64> = a.iter().map(|v| v.atan()).collect();
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_matches_hand_value() {
        let mut mlp = Mlp::init(1);
        {
            let (w1, b1, w2, b2) = mlp.weights_mut();
            w1.fill(0.0);
            b1.fill(0.0);
            w2.fill(0.0);
            *b2 = 1.0;
        }
        let x = Array2::zeros((2, INPUT_DIM));
        let y = array![0.0, 3.0];
        // predictions are (1, 1): MSE = (1 + 4) / 2
        assert!((mse(&mlp, &x, &y).unwrap() - 2.5).abs() < 1e-15);
    }
}
