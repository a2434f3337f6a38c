//! Regression networks replacing the finite-volume solver.
//!
//! One network per experiment time maps `(z_x, z_y, shape θ)` to the
//! unit-strength concentration; the strength multiplies afterwards. Inputs
//! are scaled to `[−1, 1]` over the sensor region and prior support, outputs
//! are standardized per time. Times before the source switches on are
//! identically zero and carry no network.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fv::fv_solve;
use super::source::CaseConfig;
use crate::error::{Error, Result};
use crate::inference::sample_prior;
use crate::nnet::checkpoint::{decode_layers, encode_layers, LayerRecord};
use crate::nnet::{Arch, Direction, Mlp, Optimizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub n_theta_samples: usize,
    pub hidden: Vec<usize>,
    /// Sensor locations drawn per θ sample.
    pub points_per_sample: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub train_fraction: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            n_theta_samples: 2000,
            hidden: vec![40, 80, 40, 20, 10],
            points_per_sample: 64,
            epochs: 200,
            batch_size: 128,
            lr: 2e-3,
            lr_decay: 0.985,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    /// Mean squared error of `G` per experiment time.
    pub train_mse: Vec<f64>,
    pub test_mse: Vec<f64>,
    pub n_train_rows: usize,
    pub n_test_rows: usize,
    pub dataset_seconds: f64,
    pub fit_seconds: f64,
}

/// Solver samples: rows of `(z, θ, t_index, G_unit)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateDataset {
    pub theta_dim: usize,
    pub rows: Vec<DatasetRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub sample: usize,
    pub z: [f64; 2],
    pub theta: Vec<f64>,
    pub t_index: usize,
    /// Concentration at unit strength.
    pub g_unit: f64,
    /// Concentration at the sampled strength.
    pub g: f64,
}

impl SurrogateDataset {
    /// Columns `z_x, z_y, theta_0.., t_index, G`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["z_x".to_string(), "z_y".to_string()];
        header.extend((0..self.theta_dim).map(|i| format!("theta_{i}")));
        header.push("t_index".into());
        header.push("G".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.z[0].to_string(), r.z[1].to_string()];
            rec.extend(r.theta.iter().map(f64::to_string));
            rec.push(r.t_index.to_string());
            rec.push(r.g.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `n` θ from the prior, solves, and samples each field at random
/// sensor locations in the sensor region.
pub fn generate_dataset<R: Rng + ?Sized>(
    case: &CaseConfig,
    n_theta_samples: usize,
    points_per_sample: usize,
    rng: &mut R,
) -> Result<SurrogateDataset> {
    if n_theta_samples == 0 || points_per_sample == 0 {
        return Err(Error::InvalidArgument("surrogate dataset needs samples".into()));
    }
    case.validate()?;
    let prior = case.prior();
    let grid = case.fv_grid();
    let [rlo, rhi] = case.sensor_region;
    let thetas: Vec<Vec<f64>> = (0..n_theta_samples).map(|_| sample_prior(&prior, rng)).collect();
    let points: Vec<Vec<[f64; 2]>> = (0..n_theta_samples)
        .map(|_| {
            (0..points_per_sample)
                .map(|_| [rng.gen_range(rlo..=rhi), rng.gen_range(rlo..=rhi)])
                .collect()
        })
        .collect();
    use rayon::prelude::*;
    let per_sample: Vec<Vec<DatasetRow>> = (0..n_theta_samples)
        .into_par_iter()
        .map(|i| {
            let theta = &thetas[i];
            let fields = fv_solve(&case.unit_source(theta), &case.experiment_times, &grid)?;
            let s = case.strength_of(theta);
            let mut rows = Vec::with_capacity(points_per_sample * fields.len());
            for (k, f) in fields.iter().enumerate() {
                for z in &points[i] {
                    let g_unit = f.sample(z[0], z[1])?;
                    rows.push(DatasetRow {
                        sample: i,
                        z: *z,
                        theta: theta.clone(),
                        t_index: k,
                        g_unit,
                        g: s * g_unit,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(SurrogateDataset {
        theta_dim: prior.dim(),
        rows: per_sample.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetFile {
    layer_sizes: Vec<usize>,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateFile {
    format: String,
    case: String,
    times: Vec<f64>,
    shape_dim: usize,
    input_center: Vec<f64>,
    input_half_width: Vec<f64>,
    output_mean: Vec<f64>,
    output_std: Vec<f64>,
    networks: Vec<Option<NetFile>>,
}

const SURROGATE_FORMAT: &str = "soed-surrogate-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    case: String,
    times: Vec<f64>,
    shape_dim: usize,
    input_center: Vec<f64>,
    input_half_width: Vec<f64>,
    output_mean: Vec<f64>,
    output_std: Vec<f64>,
    /// `None` for times with an identically zero field.
    nets: Vec<Option<Mlp>>,
}

impl SurrogateModel {
    pub fn input_dim(&self) -> usize {
        2 + self.shape_dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn check_case(&self, case: &CaseConfig) -> Result<()> {
        if self.times != case.experiment_times || self.shape_dim != case.shape_dim() {
            return Err(Error::Config(format!(
                "surrogate trained for {} does not fit {}",
                self.case, case.name
            )));
        }
        Ok(())
    }

    fn scaled_input(&self, z: [f64; 2], shape: &[f64], out: &mut [f64]) {
        out[0] = z[0];
        out[1] = z[1];
        out[2..].copy_from_slice(shape);
        for ((v, c), h) in out.iter_mut().zip(&self.input_center).zip(&self.input_half_width) {
            *v = (*v - c) / h;
        }
    }

    /// Unit-strength concentration at each point for one shape vector.
    pub fn predict_unit_many(&self, k: usize, points: &[[f64; 2]], shape: &[f64]) -> Result<Vec<f64>> {
        let net = match self.nets.get(k) {
            None => return Err(Error::HorizonExceeded { horizon: self.times.len() }),
            Some(None) => return Ok(vec![0.0; points.len()]),
            Some(Some(n)) => n,
        };
        if shape.len() != self.shape_dim {
            return Err(Error::LengthMismatch {
                what: "surrogate shape",
                expected: self.shape_dim,
                actual: shape.len(),
            });
        }
        let d = self.input_dim();
        let mut x = Array2::zeros((points.len(), d));
        for (row, z) in x.rows_mut().into_iter().zip(points) {
            self.scaled_input(*z, shape, row.into_slice().expect("contiguous"));
        }
        let y = net.forward_batch(x.view())?;
        Ok(y.iter().map(|v| self.output_mean[k] + self.output_std[k] * v).collect())
    }

    pub fn predict_unit(&self, k: usize, zx: f64, zy: f64, shape: &[f64]) -> Result<f64> {
        Ok(self.predict_unit_many(k, &[[zx, zy]], shape)?[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = SurrogateFile {
            format: SURROGATE_FORMAT.into(),
            case: self.case.clone(),
            times: self.times.clone(),
            shape_dim: self.shape_dim,
            input_center: self.input_center.clone(),
            input_half_width: self.input_half_width.clone(),
            output_mean: self.output_mean.clone(),
            output_std: self.output_std.clone(),
            networks: self
                .nets
                .iter()
                .map(|n| {
                    n.as_ref().map(|n| NetFile {
                        layer_sizes: n.layer_sizes(),
                        layers: encode_layers(n),
                    })
                })
                .collect(),
        };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: SurrogateFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.format != SURROGATE_FORMAT {
            return Err(Error::Config(format!("unsupported surrogate format {}", file.format)));
        }
        let nets = file
            .networks
            .iter()
            .map(|n| n.as_ref().map(|n| decode_layers(&n.layer_sizes, &n.layers)).transpose())
            .collect::<Result<_>>()?;
        Ok(Self {
            case: file.case,
            times: file.times,
            shape_dim: file.shape_dim,
            input_center: file.input_center,
            input_half_width: file.input_half_width,
            output_mean: file.output_mean,
            output_std: file.output_std,
            nets,
        })
    }
}

/// Fits one network per time on the leading `train_fraction` of θ samples and
/// reports errors on both splits.
pub fn fit_surrogate<R: Rng + ?Sized>(
    case: &CaseConfig,
    data: &SurrogateDataset,
    cfg: &SurrogateConfig,
    rng: &mut R,
) -> Result<(SurrogateModel, SurrogateReport)> {
    if data.rows.is_empty() {
        return Err(Error::InvalidArgument("empty surrogate dataset".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("invalid surrogate training settings".into()));
    }
    let start = Instant::now();
    let sd = case.shape_dim();
    let prior = case.prior();
    let [rlo, rhi] = case.sensor_region;
    let mut input_center = vec![0.5 * (rlo + rhi); 2];
    let mut input_half_width = vec![0.5 * (rhi - rlo); 2];
    for c in &prior.components[..sd] {
        let (lo, hi) = c.support();
        input_center.push(0.5 * (lo + hi));
        input_half_width.push(0.5 * (hi - lo));
    }
    let n_samples = data.rows.iter().map(|r| r.sample + 1).max().unwrap_or(0);
    let split = ((n_samples as f64) * cfg.train_fraction).round() as usize;
    let times = case.experiment_times.len();
    let mut model = SurrogateModel {
        case: case.name.clone(),
        times: case.experiment_times.clone(),
        shape_dim: sd,
        input_center,
        input_half_width,
        output_mean: vec![0.0; times],
        output_std: vec![1.0; times],
        nets: vec![None; times],
    };
    let d = model.input_dim();
    let arch = Arch::with_hidden(d, &cfg.hidden, 1)?;
    let mut train_rows = 0;
    let mut test_rows = 0;
    for k in 0..times {
        let rows: Vec<&DatasetRow> = data.rows.iter().filter(|r| r.t_index == k).collect();
        let (train, test): (Vec<&DatasetRow>, Vec<&DatasetRow>) = rows.iter().partition(|r| r.sample < split);
        train_rows += train.len();
        test_rows += test.len();
        if rows.iter().all(|r| r.g_unit == 0.0) && case.experiment_times[k] < case.switch_on {
            continue;
        }
        let mean = train.iter().map(|r| r.g_unit).sum::<f64>() / train.len().max(1) as f64;
        let var = train.iter().map(|r| (r.g_unit - mean).powi(2)).sum::<f64>() / train.len().max(1) as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        model.output_mean[k] = mean;
        model.output_std[k] = std;
        let mut x = Array2::zeros((train.len(), d));
        let mut y = Array2::zeros((train.len(), 1));
        for (i, r) in train.iter().enumerate() {
            model.scaled_input(r.z, &r.theta[..sd], x.row_mut(i).into_slice().expect("contiguous"));
            y[[i, 0]] = (r.g_unit - mean) / std;
        }
        let mut net = Mlp::new(&arch, rng);
        let mut opt = Optimizer::adam();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut lr = cfg.lr;
        let mut xb = Array2::zeros((cfg.batch_size, d));
        let mut yb = Array2::zeros((cfg.batch_size, 1));
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.batch_size) {
                let b = chunk.len();
                for (i, &r) in chunk.iter().enumerate() {
                    xb.row_mut(i).assign(&x.row(r));
                    yb[[i, 0]] = y[[r, 0]];
                }
                let xv = xb.slice(ndarray::s![..b, ..]);
                let pred = net.forward_batch(xv)?;
                let upstream = (&pred - &yb.slice(ndarray::s![..b, ..])) * (2.0 / b as f64);
                let (_, grads, _) = net.backward_batch(xv, upstream.view())?;
                opt.step(&mut net, &grads, lr, Direction::Descent)?;
            }
            lr *= cfg.lr_decay;
        }
        model.nets[k] = Some(net);
    }
    let fit_seconds = start.elapsed().as_secs_f64();
    let mut train_mse = vec![0.0; times];
    let mut test_mse = vec![0.0; times];
    for k in 0..times {
        let (mut se_tr, mut n_tr, mut se_te, mut n_te) = (0.0, 0usize, 0.0, 0usize);
        for r in data.rows.iter().filter(|r| r.t_index == k) {
            let s = case.strength_of(&r.theta);
            let pred = s * model.predict_unit(k, r.z[0], r.z[1], &r.theta[..sd])?;
            let e = (pred - r.g).powi(2);
            if r.sample < split {
                se_tr += e;
                n_tr += 1;
            } else {
                se_te += e;
                n_te += 1;
            }
        }
        train_mse[k] = se_tr / n_tr.max(1) as f64;
        test_mse[k] = se_te / n_te.max(1) as f64;
    }
    Ok((
        model,
        SurrogateReport {
            train_mse,
            test_mse,
            n_train_rows: train_rows,
            n_test_rows: test_rows,
            dataset_seconds: 0.0,
            fit_seconds,
        },
    ))
}

/// Dataset generation followed by fitting.
pub fn train_surrogate<R: Rng + ?Sized>(
    case: &CaseConfig,
    cfg: &SurrogateConfig,
    rng: &mut R,
) -> Result<(SurrogateModel, SurrogateReport, SurrogateDataset)> {
    if cfg.n_theta_samples == 0 {
        return Err(Error::InvalidArgument("n_theta_samples must be positive".into()));
    }
    let start = Instant::now();
    let data = generate_dataset(case, cfg.n_theta_samples, cfg.points_per_sample, rng)?;
    let dataset_seconds = start.elapsed().as_secs_f64();
    let (model, mut report) = fit_surrogate(case, &data, cfg, rng)?;
    report.dataset_seconds = dataset_seconds;
    Ok((model, report, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::source::Profile;
    use crate::problem::GridResolution;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> SurrogateConfig {
        SurrogateConfig {
            n_theta_samples: 10,
            hidden: vec![8, 8],
            points_per_sample: 16,
            epochs: 3,
            batch_size: 32,
            ..SurrogateConfig::default()
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let case = CaseConfig::case1(Profile::Desk);
        let cfg = SurrogateConfig {
            n_theta_samples: 0,
            ..tiny()
        };
        assert!(train_surrogate(&case, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn gated_time_is_exactly_zero_and_round_trips() {
        let mut case = CaseConfig::case1(Profile::Desk);
        case.grid = GridResolution::uniform(4, 4);
        let (model, report, data) = train_surrogate(&case, &tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(report.test_mse[0], 0.0);
        assert_eq!(model.predict_unit(0, 0.3, 0.4, &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(data.rows.len(), 10 * 16 * 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        model.save(&p).unwrap();
        assert_eq!(SurrogateModel::load(&p).unwrap(), model);
        data.write_csv(&dir.path().join("d.csv")).unwrap();
    }
}
