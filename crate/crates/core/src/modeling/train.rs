use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::ClassifierHead;
use super::loss::LossKind;
use super::{EncoderAdapter, ModelError, PredictionRecord};
use crate::attention::AttentionRecord;
use crate::ingest::AnnotatedPost;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Update the encoder's weights as well as the head's.
    pub fine_tune_encoder: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub optimizer: String,
    pub steps: u64,
}

/// Fits `head` (and, when configured and supported, the encoder) on
/// `posts`, whose gold labels must already be expressed over the head's
/// label set. Mini-batch Adam with seeded batch shuffling.
pub fn train<E: EncoderAdapter + ?Sized>(
    encoder: &mut E,
    head: &mut ClassifierHead,
    posts: &[AnnotatedPost],
    cfg: &TrainConfig,
) -> Result<TrainLog, ModelError> {
    cfg.validate()?;
    if posts.is_empty() {
        return Err(ModelError::Data("no training posts".into()));
    }
    if head.config().loss != cfg.loss {
        return Err(ModelError::Config(format!(
            "head built for {} but training with {}",
            head.config().loss.label(),
            cfg.loss.label()
        )));
    }
    let k = head.config().labels;
    let task = head.config().task;
    let targets = posts
        .iter()
        .map(|p| {
            if p.gold.task_kind() != task {
                return Err(ModelError::Data(format!("post {} has {:?} labels", p.id, p.gold.task_kind())));
            }
            p.gold.validate(k).map_err(|e| ModelError::Data(format!("post {}: {e}", p.id)))?;
            Ok(p.gold.to_targets(k))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let fine_tune = cfg.fine_tune_encoder && encoder.is_trainable();
    let frozen: Option<Vec<DVector<f64>>> = if fine_tune {
        None
    } else {
        Some(
            posts
                .iter()
                .map(|p| encoder.encode(&p.id, &p.text).map(|e| e.representation))
                .collect::<Result<_, _>>()?,
        )
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..posts.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            head.zero_grad();
            if fine_tune {
                encoder.zero_grad();
            }
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (repr, tape) = match &frozen {
                    Some(reprs) => (reprs[i].clone(), None),
                    None => encoder.forward_train(&posts[i].text)?,
                };
                let (_, head_tape) = head.forward(&repr)?;
                let (loss, d_logits) = head.loss_and_grad(&head_tape, &targets[i])?;
                total += loss;
                let d_repr = head.backward(&head_tape, &(d_logits * scale));
                if let Some(tape) = tape.as_deref() {
                    encoder.backward(tape, &d_repr);
                }
            }
            step += 1;
            head.step(cfg.learning_rate, step);
            if fine_tune {
                encoder.step(cfg.learning_rate, step);
            }
        }
        let mean = total / posts.len() as f64;
        if !mean.is_finite() {
            return Err(ModelError::Divergence { epoch, loss: mean });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainLog {
        epoch_losses,
        optimizer: "adam(beta1=0.9,beta2=0.999,eps=1e-8)".into(),
        steps: step,
    })
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub record: PredictionRecord,
    pub attention: AttentionRecord,
}

/// One prediction and one attention record per post, from the same pass.
pub fn predict<E: EncoderAdapter + ?Sized>(
    encoder: &E,
    head: &ClassifierHead,
    posts: &[AnnotatedPost],
) -> Result<Vec<Prediction>, ModelError> {
    posts
        .iter()
        .map(|p| {
            let encoded = encoder.encode(&p.id, &p.text)?;
            let out = head.predict(&encoded.representation)?;
            Ok(Prediction {
                record: PredictionRecord {
                    sample_id: p.id.clone(),
                    task: head.config().task,
                    probs: out.probs,
                    reservation: out.reservation,
                    truncated: encoded.truncated,
                },
                attention: encoded.attention,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{split, synthetic_keyword_posts};
    use crate::metrics::{multiclass_metrics, Averaging};
    use crate::modeling::{reference_encoder, HeadConfig, ReferenceEncoderConfig};
    use crate::schema::{LabelVector, TaskKind};

    fn setup(loss: LossKind, fine_tune: bool) -> (crate::modeling::ReferenceEncoder, ClassifierHead, TrainConfig) {
        let enc = reference_encoder(ReferenceEncoderConfig { seed: 1, ..Default::default() }).unwrap();
        let head = ClassifierHead::new(HeadConfig {
            input_dims: 32,
            hidden: 32,
            labels: 4,
            task: TaskKind::MultiClass,
            loss,
            seed: 2,
            payoff: None,
        })
        .unwrap();
        let cfg = TrainConfig { loss, epochs: 5, learning_rate: 0.01, batch_size: 16, seed: 200, fine_tune_encoder: fine_tune };
        (enc, head, cfg)
    }

    #[test]
    fn rejects_zero_epochs_and_empty_data() {
        let (mut enc, mut head, mut cfg) = setup(LossKind::Sce, false);
        cfg.epochs = 0;
        let posts = synthetic_keyword_posts(8, TaskKind::MultiClass, 1);
        assert!(matches!(train(&mut enc, &mut head, &posts, &cfg), Err(ModelError::Config(_))));
        cfg.epochs = 1;
        assert!(matches!(train(&mut enc, &mut head, &[], &cfg), Err(ModelError::Data(_))));
    }

    #[test]
    fn same_seed_same_loss_log() {
        let posts = synthetic_keyword_posts(40, TaskKind::MultiClass, 4);
        let run = || {
            let (mut enc, mut head, cfg) = setup(LossKind::Gl, true);
            train(&mut enc, &mut head, &posts, &cfg).unwrap().epoch_losses
        };
        let (a, b) = (run(), run());
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn learns_separable_keywords() {
        let posts = synthetic_keyword_posts(200, TaskKind::MultiClass, 8);
        let s = split(&posts, 0.8, 200).unwrap();
        let pick = |ids: &[String]| -> Vec<AnnotatedPost> {
            ids.iter().map(|id| posts.iter().find(|p| &p.id == id).unwrap().clone()).collect()
        };
        let (train_set, test_set) = (pick(&s.train), pick(&s.test));
        for loss in [LossKind::Sce, LossKind::Gl] {
            let (mut enc, mut head, cfg) = setup(loss, true);
            let log = train(&mut enc, &mut head, &train_set, &cfg).unwrap();
            for w in log.epoch_losses.windows(2) {
                assert!(w[1] <= w[0], "{loss:?} loss increased: {:?}", log.epoch_losses);
            }
            let preds = predict(&enc, &head, &test_set).unwrap();
            let pred: Vec<usize> = preds
                .iter()
                .map(|p| match p.record.predicted() {
                    LabelVector::MultiClass { class } => class,
                    _ => unreachable!(),
                })
                .collect();
            let gold: Vec<usize> = test_set
                .iter()
                .map(|p| match p.gold {
                    LabelVector::MultiClass { class } => class,
                    _ => unreachable!(),
                })
                .collect();
            let row = multiclass_metrics(&pred, &gold, 4, Averaging::Macro).unwrap();
            assert!(row.f1 >= 0.9, "{loss:?} f1 {}", row.f1);
        }
    }

    #[test]
    fn empty_predict() {
        let (enc, head, _) = setup(LossKind::Sce, false);
        assert!(predict(&enc, &head, &[]).unwrap().is_empty());
    }
}

