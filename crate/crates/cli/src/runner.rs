//! Shared machinery for the train/eval/analyze drivers: prepared samples,
//! deterministic seed streams, model state with checkpoint round-trip, and
//! the batched reasoning forward pass.

use std::collections::BTreeMap;
use std::path::Path;

use mcout_core::mcout::{
    run_reasoning, BoundLatent, LatentAttentionParams, ReasoningConfig, ReasoningRun, Variant,
};
use mcout_core::model::{
    interleave, vocab, BoundModel, DecoderState, Image, InterleavedBatch, ModelParams,
};
use mcout_core::optim::AdamW;
use mcout_core::rng::{derive_seed, seeded};
use mcout_core::{contract_error, Error, Graph, Tensor};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::Record;
use crate::error::{CliError, CliResult};

// Independent seed streams derived from the run seed.
const STREAM_MODEL_INIT: u64 = 1;
const STREAM_LATENT_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 0x1000_0000;
const STREAM_DROPOUT: u64 = 0x2000_0000;
const STREAM_GENERATE: u64 = 0x3000_0000;

pub fn shuffle_seed(seed: u64, epoch: u64) -> u64 {
    derive_seed(seed, STREAM_SHUFFLE + epoch)
}

pub fn dropout_seed(seed: u64, step: u64) -> u64 {
    derive_seed(seed, STREAM_DROPOUT + step)
}

pub fn generation_seed(eval_seed: u64, sample_index: u64) -> u64 {
    derive_seed(derive_seed(eval_seed, STREAM_GENERATE), sample_index)
}

/// A dataset record decoded for the model: pixels plus token ids.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    pub image: Image,
    pub question_ids: Vec<u32>,
    /// Answer bytes followed by the end-of-sequence id.
    pub answer_ids: Vec<u32>,
    pub answer_text: String,
    pub has_choices: bool,
}

pub fn prepare(records: &[Record]) -> CliResult<Vec<PreparedSample>> {
    records
        .iter()
        .map(|r| {
            if r.answer.is_empty() {
                return Err(CliError::Contract(contract_error!(
                    "record {}: empty answer",
                    r.id
                )));
            }
            let mut answer_ids = vocab::encode(&r.answer);
            answer_ids.push(vocab::EOS);
            Ok(PreparedSample {
                id: r.id.clone(),
                image: r.to_image()?,
                question_ids: vocab::encode(&r.question),
                answer_ids,
                answer_text: r.answer.clone(),
                has_choices: r.choices.is_some(),
            })
        })
        .collect()
}

/// Run metadata stored in the checkpoint config blob. `notes` records the
/// defaults this implementation fills in where the training recipe leaves
/// them open, so a run's provenance is readable from its artifacts.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub run: RunConfig,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub fn default_notes() -> Vec<String> {
    vec![
        "optimizer: AdamW (beta1 0.9, beta2 0.999, eps 1e-8) is an implementation default".into(),
        "dropout: implementation default 0.0 unless configured".into(),
        "gradient clipping: none applied".into(),
    ]
}

/// Model and (for the multi variant) latent-attention parameters together
/// with the run configuration they were built from.
pub struct ModelState {
    pub run: RunConfig,
    pub params: ModelParams<f64>,
    pub latent: Option<LatentAttentionParams<f64>>,
}

impl ModelState {
    pub fn init(run: RunConfig) -> CliResult<Self> {
        run.validate().map_err(CliError::Contract)?;
        let params = ModelParams::init(run.model_config(), derive_seed(run.seed, STREAM_MODEL_INIT))
            .map_err(CliError::Contract)?;
        let latent = match run.variant {
            Variant::Multi => Some(
                LatentAttentionParams::init(
                    run.dim,
                    run.latent_heads,
                    derive_seed(run.seed, STREAM_LATENT_INIT),
                )
                .map_err(CliError::Contract)?,
            ),
            Variant::Base => None,
        };
        Ok(Self { run, params, latent })
    }

    /// Parameters in optimizer order: model tensors, then latent tensors.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.params.visit().into_iter().map(|(n, _)| n).collect();
        if let Some(latent) = &self.latent {
            names.extend(latent.visit().into_iter().map(|(n, _)| n));
        }
        names
    }

    pub fn tensor_map(&self) -> BTreeMap<String, Tensor<f64>> {
        let mut map = BTreeMap::new();
        for (name, t) in self.params.visit() {
            map.insert(name, t.clone());
        }
        if let Some(latent) = &self.latent {
            for (name, t) in latent.visit() {
                map.insert(name, t.clone());
            }
        }
        map
    }

    pub fn save(&self, path: &Path, opt: Option<&AdamW<f64>>) -> CliResult<()> {
        let mut map = self.tensor_map();
        if let Some(opt) = opt {
            let names = self.param_names();
            let (m, v) = opt.moments();
            if !m.is_empty() {
                if m.len() != names.len() {
                    return Err(CliError::Contract(contract_error!(
                        "optimizer tracks {} tensors, model has {}",
                        m.len(),
                        names.len()
                    )));
                }
                for (i, name) in names.iter().enumerate() {
                    map.insert(format!("opt.m.{name}"), m[i].clone());
                    map.insert(format!("opt.v.{name}"), v[i].clone());
                }
            }
            map.insert(
                "opt.step".into(),
                Tensor::scalar(opt.step_count() as f64),
            );
        }
        let meta = CheckpointMeta {
            run: self.run.clone(),
            notes: default_notes(),
        };
        let config_json = serde_json::to_string(&meta)
            .map_err(|e| CliError::io("serializing run config", e))?;
        checkpoint::save(path, &map, &config_json)
    }

    /// Loads a checkpoint; returns the state and, when the file carries
    /// optimizer moments, an optimizer restored to them.
    pub fn load(path: &Path) -> CliResult<(Self, Option<AdamW<f64>>)> {
        let (map, config_json) = checkpoint::load::<f64>(path)?;
        let meta: CheckpointMeta = serde_json::from_str(&config_json)
            .map_err(|e| CliError::io(&format!("checkpoint {}: bad config blob", path.display()), e))?;
        let run = meta.run;
        run.validate().map_err(CliError::Contract)?;
        let params = ModelParams::from_named(run.model_config(), &map).map_err(CliError::Contract)?;
        let latent = match run.variant {
            Variant::Multi => Some(
                LatentAttentionParams::from_named(run.dim, run.latent_heads, &map)
                    .map_err(CliError::Contract)?,
            ),
            Variant::Base => None,
        };
        let state = Self { run, params, latent };

        let names = state.param_names();
        let mut expected: Vec<String> = names.clone();
        let has_opt = map.contains_key("opt.step");
        if has_opt {
            for n in &names {
                expected.push(format!("opt.m.{n}"));
                expected.push(format!("opt.v.{n}"));
            }
            expected.push("opt.step".into());
        }
        let expected: std::collections::BTreeSet<&str> =
            expected.iter().map(String::as_str).collect();
        for name in map.keys() {
            if !expected.contains(name.as_str()) {
                return Err(CliError::Contract(contract_error!(
                    "checkpoint has unknown tensor {name:?}"
                )));
            }
        }

        let opt = if has_opt {
            let step = map["opt.step"].item().map_err(CliError::Contract)?;
            if step < 0.0 || step.fract() != 0.0 {
                return Err(CliError::Contract(contract_error!(
                    "opt.step {step} is not a step count"
                )));
            }
            let mut m = Vec::with_capacity(names.len());
            let mut v = Vec::with_capacity(names.len());
            for n in &names {
                m.push(
                    map.get(&format!("opt.m.{n}"))
                        .ok_or_else(|| {
                            CliError::Contract(contract_error!("checkpoint missing opt.m.{n}"))
                        })?
                        .clone(),
                );
                v.push(
                    map.get(&format!("opt.v.{n}"))
                        .ok_or_else(|| {
                            CliError::Contract(contract_error!("checkpoint missing opt.v.{n}"))
                        })?
                        .clone(),
                );
            }
            let mut opt = AdamW::new(state.run.adamw());
            opt.restore(m, v, step as u64).map_err(CliError::Contract)?;
            Some(opt)
        } else {
            None
        };
        Ok((state, opt))
    }
}

/// One batched reasoning forward pass: the graph plus everything bound
/// into it.
pub struct BatchRun {
    pub g: Graph<f64>,
    pub bound: BoundModel,
    pub latent: Option<BoundLatent>,
    pub batch: InterleavedBatch<f64>,
    pub run: ReasoningRun<f64>,
}

pub fn reason_batch(
    state: &ModelState,
    rcfg: &ReasoningConfig,
    samples: &[&PreparedSample],
    trainable: bool,
    dropout_seed: Option<u64>,
) -> CliResult<BatchRun> {
    if samples.is_empty() {
        return Err(CliError::Contract(Error::Config("empty batch".into())));
    }
    let mut g: Graph<f64> = Graph::new();
    let bound = BoundModel::bind(&mut g, &state.params, trainable);
    let latent = match (rcfg.variant, &state.latent) {
        (Variant::Multi, Some(p)) => Some(BoundLatent::bind(&mut g, p, trainable)),
        (Variant::Multi, None) => {
            return Err(CliError::Contract(Error::Config(
                "multi variant needs latent parameters".into(),
            )))
        }
        (Variant::Base, _) => None,
    };
    let images: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
    let questions: Vec<Vec<u32>> = samples.iter().map(|s| s.question_ids.clone()).collect();
    let batch = interleave(&mut g, &bound, &images, &questions).map_err(CliError::Contract)?;
    let mut dstate = DecoderState::fresh(state.run.layers);
    if let Some(seed) = dropout_seed {
        if state.run.dropout > 0.0 {
            dstate = dstate.with_dropout_rng(seeded(seed));
        }
    }
    let run = run_reasoning(&mut g, &bound, latent.as_ref(), rcfg, &batch, dstate)
        .map_err(CliError::Contract)?;
    Ok(BatchRun {
        g,
        bound,
        latent,
        batch,
        run,
    })
}

impl BatchRun {
    /// Gradients for every parameter in optimizer order (model, then
    /// latent). Call after `backward`.
    pub fn gradients(&self) -> Vec<Option<Tensor<f64>>> {
        let mut grads = self.bound.gradients(&self.g);
        if let Some(latent) = &self.latent {
            grads.extend(latent.gradients(&self.g));
        }
        grads
    }
}

/// Mutable parameter references in the same order as [`BatchRun::gradients`].
pub fn param_refs<'a>(
    params: &'a mut ModelParams<f64>,
    latent: &'a mut Option<LatentAttentionParams<f64>>,
) -> Vec<&'a mut Tensor<f64>> {
    let mut refs: Vec<&mut Tensor<f64>> = params
        .visit_mut()
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    if let Some(latent) = latent {
        refs.extend(latent.visit_mut().into_iter().map(|(_, t)| t));
    }
    refs
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcout_core::data::{generate_dataset, DatasetSpec, TaskKind};

    fn tiny_state(variant: Variant) -> ModelState {
        let mut run = RunConfig::default();
        run.layers = 1;
        run.heads = 2;
        run.dim = 16;
        run.latent_heads = 2;
        run.variant = variant;
        run.n_t = 2;
        ModelState::init(run).unwrap()
    }

    fn tiny_samples(n: usize) -> Vec<PreparedSample> {
        let spec = DatasetSpec::toy(TaskKind::Count, n, 5);
        let records: Vec<Record> = generate_dataset(&spec)
            .unwrap()
            .iter()
            .map(Record::from_sample)
            .collect();
        prepare(&records).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_preserves_state() {
        let state = tiny_state(Variant::Multi);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mcout");
        state.save(&path, None).unwrap();
        let (back, opt) = ModelState::load(&path).unwrap();
        assert!(opt.is_none());
        assert_eq!(back.run, state.run);
        assert_eq!(back.tensor_map(), state.tensor_map());
        // Saving the loaded state reproduces the file byte for byte.
        let path2 = dir.path().join("m2.mcout");
        back.save(&path2, None).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn unknown_tensor_rejected() {
        let state = tiny_state(Variant::Base);
        let mut map = state.tensor_map();
        map.insert("mystery".into(), Tensor::scalar(1.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mcout");
        let json = serde_json::to_string(&CheckpointMeta {
            run: state.run.clone(),
            notes: Vec::new(),
        })
        .unwrap();
        checkpoint::save(&path, &map, &json).unwrap();
        match ModelState::load(&path) {
            Err(err) => assert!(format!("{err}").contains("unknown tensor")),
            Ok(_) => panic!("load accepted a tensor the model does not own"),
        }
    }

    #[test]
    fn reasoning_batch_runs_both_variants() {
        for variant in [Variant::Base, Variant::Multi] {
            let state = tiny_state(variant);
            let samples = tiny_samples(3);
            let refs: Vec<&PreparedSample> = samples.iter().collect();
            let rcfg = state.run.reasoning_config();
            let br = reason_batch(&state, &rcfg, &refs, false, None).unwrap();
            assert_eq!(br.run.steps.len(), 3);
            assert_eq!(br.run.trace.records.len(), 2);
        }
    }

    #[test]
    fn prepared_answers_end_with_eos() {
        for s in tiny_samples(4) {
            assert_eq!(*s.answer_ids.last().unwrap(), vocab::EOS);
            assert!(!s.answer_ids.contains(&vocab::PAD));
        }
    }
}
