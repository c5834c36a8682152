//! Versioned binary checkpoints.
//!
//! One file holds everything a run needs to be inspected or resumed: the
//! config echo with its hash, both RNG streams, the step counters, every
//! parameter array (policy, twin value nets, their targets, critic, target
//! critic), and the optimizer moments. All integers and floats are
//! little-endian; arrays are length-prefixed and name-tagged.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::critic::{CriticNet, TargetCritic};
use crate::error::CoreError;
use crate::estimators::RewardKind;
use crate::model::Model;
use crate::policy::NeuralPolicy;
use crate::trainer::{Td3, Trainer, TrainerConfig};
use boed_nn::{Adam64, Param64};

const MAGIC: &[u8; 8] = b"BOEDCKPT";
const VERSION: u32 = 1;

/// Everything needed to rebuild the networks: which model, which reward
/// shaping, and the full trainer configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub model: String,
    pub reward: RewardKind,
    pub trainer: TrainerConfig,
}

/// Hex SHA-256 of the canonical JSON encoding of the meta block. Artifacts
/// produced by one run all carry this value.
pub fn config_hash(meta: &CheckpointMeta) -> Result<String, CoreError> {
    let json = serde_json::to_vec(meta)?;
    Ok(hex(&Sha256::digest(&json)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
struct RngSnapshot {
    seed: [u8; 32],
    stream: u64,
    word_pos: u128,
}

impl RngSnapshot {
    fn of(rng: &ChaCha12Rng) -> Self {
        RngSnapshot {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    fn build(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// In-memory image of a checkpoint file.
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub hash: String,
    rollout_rng: RngSnapshot,
    update_rng: RngSnapshot,
    pub env_steps: u64,
    pub td3_steps: u64,
    pub trajectory_counter: u64,
    pub eval_counter: u64,
    opt_steps: BTreeMap<String, u64>,
    arrays: BTreeMap<String, Vec<f64>>,
}

fn store_params(arrays: &mut BTreeMap<String, Vec<f64>>, prefix: &str, params: &[&Param64]) {
    for (i, p) in params.iter().enumerate() {
        arrays.insert(format!("{prefix}.{i}"), p.value.clone());
    }
}

fn store_moments(
    arrays: &mut BTreeMap<String, Vec<f64>>,
    opt_steps: &mut BTreeMap<String, u64>,
    prefix: &str,
    opt: &Adam64,
) {
    opt_steps.insert(prefix.to_string(), opt.t);
    let (m, v) = opt.moments();
    for (i, buf) in m.iter().enumerate() {
        arrays.insert(format!("{prefix}.m.{i}"), buf.clone());
    }
    for (i, buf) in v.iter().enumerate() {
        arrays.insert(format!("{prefix}.v.{i}"), buf.clone());
    }
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer) -> Self {
        let mut arrays = BTreeMap::new();
        let mut opt_steps = BTreeMap::new();
        store_params(&mut arrays, "policy", &trainer.td3.policy.params());
        store_params(&mut arrays, "q", &trainer.td3.q.params());
        store_params(
            &mut arrays,
            "policy_target",
            &trainer.td3.policy_target().params(),
        );
        store_params(&mut arrays, "q_target", &trainer.td3.q_target().params());
        store_params(&mut arrays, "critic", &trainer.critic.params());
        store_params(
            &mut arrays,
            "target_critic",
            &trainer.target_critic.net().params(),
        );
        store_moments(&mut arrays, &mut opt_steps, "policy_opt", &trainer.td3.policy_opt);
        store_moments(&mut arrays, &mut opt_steps, "q_opt", &trainer.td3.q_opt);
        store_moments(&mut arrays, &mut opt_steps, "critic_opt", &trainer.critic_opt);
        let meta = CheckpointMeta {
            model: trainer.model_name().to_string(),
            reward: trainer.reward_kind,
            trainer: trainer.config.clone(),
        };
        let hash = config_hash(&meta).expect("the config serializes");
        Checkpoint {
            meta,
            hash,
            rollout_rng: RngSnapshot::of(&trainer.rollout_rng),
            update_rng: RngSnapshot::of(&trainer.update_rng),
            env_steps: trainer.env_steps,
            td3_steps: trainer.td3_steps,
            trajectory_counter: trainer.trajectory_counter,
            eval_counter: trainer.eval_counter,
            opt_steps,
            arrays,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CoreError> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta_json = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta_json);
        out.extend_from_slice(&Sha256::digest(&meta_json));
        for rng in [&self.rollout_rng, &self.update_rng] {
            out.extend_from_slice(&rng.seed);
            out.extend_from_slice(&rng.stream.to_le_bytes());
            out.extend_from_slice(&rng.word_pos.to_le_bytes());
        }
        for counter in [
            self.env_steps,
            self.td3_steps,
            self.trajectory_counter,
            self.eval_counter,
        ] {
            out.extend_from_slice(&counter.to_le_bytes());
        }
        out.extend_from_slice(&(self.opt_steps.len() as u32).to_le_bytes());
        for (name, t) in &self.opt_steps {
            write_name(&mut out, name);
            out.extend_from_slice(&t.to_le_bytes());
        }
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for (name, data) in &self.arrays {
            write_name(&mut out, name);
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, at: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(CoreError::format("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CoreError::format(format!(
                "unsupported checkpoint format version {version}, expected {VERSION}"
            )));
        }
        let meta_len = r.u64()? as usize;
        let meta_json = r.take(meta_len)?.to_vec();
        let stored_digest = r.take(32)?.to_vec();
        if Sha256::digest(&meta_json).as_slice() != stored_digest {
            return Err(CoreError::format(
                "checkpoint config block does not match its hash",
            ));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&meta_json)?;
        let hash = hex(&stored_digest);
        let mut rngs = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut seed = [0u8; 32];
            seed.copy_from_slice(r.take(32)?);
            let stream = r.u64()?;
            let word_pos = r.u128()?;
            rngs.push(RngSnapshot { seed, stream, word_pos });
        }
        let env_steps = r.u64()?;
        let td3_steps = r.u64()?;
        let trajectory_counter = r.u64()?;
        let eval_counter = r.u64()?;
        let n_opt = r.u32()? as usize;
        let mut opt_steps = BTreeMap::new();
        for _ in 0..n_opt {
            let name = r.name()?;
            opt_steps.insert(name, r.u64()?);
        }
        let n_arrays = r.u64()? as usize;
        let mut arrays = BTreeMap::new();
        for _ in 0..n_arrays {
            let name = r.name()?;
            let count = r.u64()? as usize;
            let raw = r.take(count * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            arrays.insert(name, data);
        }
        if r.at != bytes.len() {
            return Err(CoreError::format(format!(
                "checkpoint has {} trailing bytes",
                bytes.len() - r.at
            )));
        }
        let update_rng = rngs.pop().expect("two snapshots");
        let rollout_rng = rngs.pop().expect("two snapshots");
        Ok(Checkpoint {
            meta,
            hash,
            rollout_rng,
            update_rng,
            env_steps,
            td3_steps,
            trajectory_counter,
            eval_counter,
            opt_steps,
            arrays,
        })
    }

    pub fn rng_states(&self) -> (ChaCha12Rng, ChaCha12Rng) {
        (self.rollout_rng.build(), self.update_rng.build())
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays.get(name).map(Vec::as_slice)
    }

    fn fill(&self, prefix: &str, params: &mut [&mut Param64]) -> Result<(), CoreError> {
        for (i, p) in params.iter_mut().enumerate() {
            let name = format!("{prefix}.{i}");
            let data = self
                .arrays
                .get(&name)
                .ok_or_else(|| CoreError::format(format!("checkpoint is missing array '{name}'")))?;
            if data.len() != p.value.len() {
                return Err(CoreError::format(format!(
                    "array '{name}' holds {} values but the network expects {}",
                    data.len(),
                    p.value.len()
                )));
            }
            p.value.copy_from_slice(data);
        }
        Ok(())
    }

    fn fill_opt(&self, prefix: &str, param_count: usize, opt: &mut Adam64) -> Result<(), CoreError> {
        let t = *self
            .opt_steps
            .get(prefix)
            .ok_or_else(|| CoreError::format(format!("checkpoint is missing '{prefix}' state")))?;
        if t == 0 {
            return Ok(());
        }
        let mut m = Vec::with_capacity(param_count);
        let mut v = Vec::with_capacity(param_count);
        for i in 0..param_count {
            let grab = |kind: &str| -> Result<Vec<f64>, CoreError> {
                let name = format!("{prefix}.{kind}.{i}");
                self.arrays
                    .get(&name)
                    .cloned()
                    .ok_or_else(|| CoreError::format(format!("checkpoint is missing array '{name}'")))
            };
            m.push(grab("m")?);
            v.push(grab("v")?);
        }
        opt.restore_moments(t, m, v);
        Ok(())
    }

    fn check_model(&self, model: &dyn Model) -> Result<(), CoreError> {
        if model.name() != self.meta.model {
            return Err(CoreError::format(format!(
                "checkpoint was trained on model '{}', not '{}'",
                self.meta.model,
                model.name()
            )));
        }
        Ok(())
    }

    pub fn restore_policy(&self, model: &dyn Model) -> Result<NeuralPolicy, CoreError> {
        self.check_model(model)?;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut policy = NeuralPolicy::new(
            model,
            self.meta.trainer.horizon,
            &self.meta.trainer.hidden,
            &mut rng,
        );
        self.fill("policy", &mut policy.params_mut())?;
        Ok(policy)
    }

    pub fn restore_critic(&self, model: &dyn Model) -> Result<CriticNet, CoreError> {
        self.check_model(model)?;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut critic = CriticNet::new(model, &mut rng)?;
        self.fill("critic", &mut critic.params_mut())?;
        Ok(critic)
    }

    pub fn restore_target_critic(&self, model: &dyn Model) -> Result<TargetCritic, CoreError> {
        self.check_model(model)?;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut net = CriticNet::new(model, &mut rng)?;
        self.fill("target_critic", &mut net.params_mut())?;
        Ok(TargetCritic::new(&net))
    }

    pub fn restore_td3(&self, model: &dyn Model) -> Result<Td3, CoreError> {
        self.check_model(model)?;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut td3 = Td3::new(model, &self.meta.trainer, &mut rng)?;
        self.fill("policy", &mut td3.policy.params_mut())?;
        self.fill("q", &mut td3.q.params_mut())?;
        self.fill("policy_target", &mut td3.policy_target_mut().params_mut())?;
        self.fill("q_target", &mut td3.q_target_mut().params_mut())?;
        let n_policy = td3.policy.params().len();
        let n_q = td3.q.params().len();
        self.fill_opt("policy_opt", n_policy, &mut td3.policy_opt)?;
        self.fill_opt("q_opt", n_q, &mut td3.q_opt)?;
        Ok(td3)
    }
}

fn write_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CoreError> {
        if self.at + n > self.bytes.len() {
            return Err(CoreError::format(format!(
                "checkpoint truncated at byte {} (wanted {} more)",
                self.at, n
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128, CoreError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn name(&mut self) -> Result<String, CoreError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CoreError::format("array name is not UTF-8"))
    }
}
