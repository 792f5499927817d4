//! Adam training loop with global-norm clipping and a multistep schedule.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{build_batch, ViewRef, WindowSampler};
use crate::error::{Error, Result};
use crate::geometry::MultiViewSample;
use crate::netcore::{sequence_loss, Gradients, Mode, Model, ObjectiveSpec, ParamStore};
use crate::tensor::Matrix;

/// Which parts of the method a run switches off. All `false` is the full
/// model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub disable_projection: bool,
    pub disable_ortho_loss: bool,
    pub disable_align_loss: bool,
}

impl AblationSpec {
    pub const FULL: AblationSpec = AblationSpec { disable_projection: false, disable_ortho_loss: false, disable_align_loss: false };
    pub const NO_PROJECTION: AblationSpec = AblationSpec { disable_projection: true, ..Self::FULL };
    pub const NO_ORTHO: AblationSpec = AblationSpec { disable_ortho_loss: true, ..Self::FULL };
    pub const NO_ALIGN: AblationSpec = AblationSpec { disable_align_loss: true, ..Self::FULL };
    pub const NO_LOSSES: AblationSpec = AblationSpec { disable_ortho_loss: true, disable_align_loss: true, ..Self::FULL };

    pub fn name(&self) -> &'static str {
        match (self.disable_projection, self.disable_ortho_loss, self.disable_align_loss) {
            (false, false, false) => "full",
            (true, false, false) => "no-projection",
            (false, true, false) => "no-ortho",
            (false, false, true) => "no-align",
            (false, true, true) => "no-losses",
            _ => "custom",
        }
    }

    pub fn objective(&self, cfg: &TrainConfig) -> ObjectiveSpec {
        ObjectiveSpec {
            project: !self.disable_projection,
            use_ortho: !self.disable_ortho_loss,
            use_align: !self.disable_align_loss,
            ..cfg.objective()
        }
    }
}

impl std::str::FromStr for AblationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::FULL, Self::NO_PROJECTION, Self::NO_ORTHO, Self::NO_ALIGN, Self::NO_LOSSES]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation `{s}`")))
    }
}

/// One optimizer step's losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub l_pose: f64,
    pub l_ortho: f64,
    pub l_align: f64,
    pub l_total: f64,
    pub lr: f64,
}

pub fn write_history_csv<W: Write>(out: W, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamStore<f64>,
    v: ParamStore<f64>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore<f64>) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore<f64>, grads: &Gradients<f64>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (id, g) in grads.by_param.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (self.m.by_id_mut(id).data_mut(), self.v.by_id_mut(id).data_mut());
            let p = params.by_id_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g.data()[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g.data()[i] * g.data()[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

pub fn global_norm(grads: &Gradients<f64>) -> f64 {
    grads.by_param.iter().flatten().map(Matrix::frobenius_sq).sum::<f64>().sqrt()
}

/// Rescale so the global norm is at most `max_norm` (no-op for 0).
pub fn clip_global_norm(grads: &mut Gradients<f64>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.by_param.iter_mut().flatten().for_each(|g| g.scale_assign(s));
    }
    norm
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model<f64>,
    pub history: Vec<HistoryRow>,
}

fn check_finite(step: usize, row: &HistoryRow, grad_norm: f64) -> Result<()> {
    let vals = [("l_pose", row.l_pose), ("l_ortho", row.l_ortho), ("l_align", row.l_align), ("grad_norm", grad_norm)];
    match vals.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, v)) => Err(Error::NaNLoss { step, detail: format!("{name} = {v}") }),
        None => Ok(()),
    }
}

/// Train on windows drawn from `pool`. Deterministic in `config.optim.seed`:
/// initialization, window order, start frames and dropout masks all derive
/// from it.
pub fn train(
    data: &[MultiViewSample<f64>],
    pool: &[ViewRef],
    config: &TrainConfig,
    ablation: AblationSpec,
) -> Result<TrainOutcome> {
    config.validate()?;
    let len = config.optim.clip_len;
    if pool.is_empty() {
        return Err(Error::InvalidArgument("training pool is empty".into()));
    }
    if let Some(&(s, _)) = pool.iter().find(|&&(s, _)| data[s].clip.len() < len) {
        return Err(Error::TooShort { need: len, got: data[s].clip.len() });
    }
    let seed = config.optim.seed;
    let mut model = Model::new(config.model.clone(), seed)?;
    model.project = !ablation.disable_projection;
    let spec = ablation.objective(config);
    let batch = config.optim.batch_size;
    let mut sampler = WindowSampler::new(pool.to_vec(), seed ^ 0x5a5a);
    let total = sampler.steps_per_epoch(batch) * config.optim.epochs;
    let mut adam = Adam::new(&model.params);
    let mut history = Vec::with_capacity(total);
    for step in 0..total {
        let picks = sampler.next(data, batch, len);
        let b = build_batch(data, &picks, len)?;
        let lr = config.lr_at(step, total);
        let (row, mut grads) = {
            let mut t = model.tape(Mode::Train { seed: seed.wrapping_add(step as u64 + 1) });
            let lv = sequence_loss(&mut t, &model.config, &b, &spec);
            let row = HistoryRow {
                step,
                l_pose: t.value(lv.l_pose).item(),
                l_ortho: t.value(lv.l_ortho).item(),
                l_align: t.value(lv.l_align).item(),
                l_total: t.value(lv.l_total).item(),
                lr,
            };
            (row, t.backward(lv.l_total))
        };
        let norm = clip_global_norm(&mut grads, config.optim.grad_clip);
        check_finite(step, &row, norm)?;
        adam.step(&mut model.params, &grads, lr);
        history.push(row);
    }
    Ok(TrainOutcome { model, history })
}

/// Everything besides the tensors that a checkpoint needs to be reloaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub ablation: AblationSpec,
}

/// Writes `<stem>.bin`, `<stem>.manifest` and `<stem>.json`.
pub fn save_checkpoint(stem: &Path, model: &Model<f64>, meta: &CheckpointMeta) -> Result<()> {
    model.params.save(stem)?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(stem.with_extension("json"), json)?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<(Model<f64>, CheckpointMeta)> {
    let text = std::fs::read_to_string(stem.with_extension("json"))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let params = ParamStore::load(stem)?;
    let mut model = Model::from_params(meta.config.model.clone(), params)?;
    model.project = !meta.ablation.disable_projection;
    Ok((model, meta))
}
