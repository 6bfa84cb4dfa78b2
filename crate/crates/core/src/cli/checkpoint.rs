//! Binary checkpoints: little-endian, magic `CGAN`, a format version, the
//! storage precision, then length-prefixed named sections.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CliError, RunConfig};
use crate::diffcore::{DType, Real, Tensor};
use crate::nn::{ModelSpec, ParamSet};
use crate::optim::AdamState;
use crate::trainer::{GammaState, TrainState};

pub const MAGIC: &[u8; 4] = b"CGAN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload<T: Real> {
    /// Output of pre-training.
    Classifier {
        params: ParamSet<T>,
        final_loss: f64,
    },
    Training(Box<TrainState<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub config: RunConfig,
    pub payload: Payload<T>,
}

/// A checkpoint of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyCheckpoint {
    F64(Checkpoint<f64>),
    F32(Checkpoint<f32>),
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }
    fn tensor<T: Real>(&mut self, t: &Tensor<T>) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            v.write_le(&mut self.0);
        }
    }
    fn tensors<T: Real>(&mut self, map: &BTreeMap<String, Tensor<T>>) {
        self.u64(map.len() as u64);
        for (k, t) in map {
            self.str(k);
            self.tensor(t);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, at: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn done(&self) -> bool {
        self.at == self.buf.len()
    }
    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, CliError> {
        usize::try_from(self.u64()?).map_err(|_| bad("length overflows usize"))
    }
    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8], CliError> {
        let n = self.usize()?;
        self.take(n)
    }
    fn str(&mut self) -> Result<&'a str, CliError> {
        std::str::from_utf8(self.bytes()?).map_err(|_| bad("section text is not UTF-8"))
    }
    fn tensor<T: Real>(&mut self) -> Result<Tensor<T>, CliError> {
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.usize())
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("tensor size overflows"))?;
        let w = T::DTYPE.byte_width();
        let raw = self.take(
            n.checked_mul(w)
                .ok_or_else(|| bad("tensor size overflows"))?,
        )?;
        let data = raw.chunks_exact(w).map(T::read_le).collect();
        Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
    }
    fn tensors<T: Real>(&mut self) -> Result<BTreeMap<String, Tensor<T>>, CliError> {
        let n = self.usize()?;
        let mut map = BTreeMap::new();
        for _ in 0..n {
            let k = self.str()?.to_string();
            map.insert(k, self.tensor()?);
        }
        Ok(map)
    }
}

fn put_params<T: Real>(w: &mut Writer, p: &ParamSet<T>) {
    w.str(&serde_json::to_string(&p.spec).expect("spec serializes"));
    w.u64(p.init_seed);
    w.tensors(&p.tensors);
}

fn get_params<T: Real>(r: &mut Reader) -> Result<ParamSet<T>, CliError> {
    let spec: ModelSpec =
        serde_json::from_str(r.str()?).map_err(|e| bad(format!("model spec: {e}")))?;
    Ok(ParamSet {
        spec,
        init_seed: r.u64()?,
        tensors: r.tensors()?,
    })
}

fn put_adam<T: Real>(w: &mut Writer, a: &AdamState<T>) {
    w.u64(a.step);
    for v in [a.lr, a.beta1, a.beta2, a.eps] {
        w.f64(v);
    }
    w.tensors(&a.m);
    w.tensors(&a.v);
}

fn get_adam<T: Real>(r: &mut Reader) -> Result<AdamState<T>, CliError> {
    Ok(AdamState {
        step: r.u64()?,
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
        m: r.tensors()?,
        v: r.tensors()?,
    })
}

fn put_gamma(w: &mut Writer, g: &GammaState) {
    for v in [g.gamma, g.r, g.e_target] {
        w.f64(v);
    }
    w.u64(g.capacity as u64);
    w.u64(g.history.len() as u64);
    for &(a, b) in &g.history {
        w.f64(a);
        w.f64(b);
    }
}

fn get_gamma(r: &mut Reader) -> Result<GammaState, CliError> {
    let (gamma, rr, e_target) = (r.f64()?, r.f64()?, r.f64()?);
    let capacity = r.usize()?;
    let n = r.usize()?;
    if n > capacity {
        return Err(bad("gamma history longer than its capacity"));
    }
    let mut history = VecDeque::with_capacity(capacity);
    for _ in 0..n {
        history.push_back((r.f64()?, r.f64()?));
    }
    Ok(GammaState {
        gamma,
        r: rr,
        e_target,
        history,
        capacity,
    })
}

fn put_rng(w: &mut Writer, rng: &ChaCha8Rng) {
    w.0.extend_from_slice(&rng.get_seed());
    w.u64(rng.get_stream());
    w.0.extend_from_slice(&rng.get_word_pos().to_le_bytes());
}

fn get_rng(r: &mut Reader) -> Result<ChaCha8Rng, CliError> {
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(r.u64()?);
    rng.set_word_pos(u128::from_le_bytes(r.take(16)?.try_into().unwrap()));
    Ok(rng)
}

fn cast_adam<A: Real, B: Real>(a: &AdamState<A>) -> AdamState<B> {
    let cast =
        |m: &BTreeMap<String, Tensor<A>>| m.iter().map(|(k, t)| (k.clone(), t.cast())).collect();
    AdamState {
        m: cast(&a.m),
        v: cast(&a.v),
        step: a.step,
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
    }
}

impl<T: Real> Checkpoint<T> {
    /// Converts every tensor to precision `U`.
    pub fn cast<U: Real>(&self) -> Checkpoint<U> {
        let payload = match &self.payload {
            Payload::Classifier { params, final_loss } => Payload::Classifier {
                params: params.cast(),
                final_loss: *final_loss,
            },
            Payload::Training(s) => Payload::Training(Box::new(TrainState {
                params_g: s.params_g.cast(),
                params_d: s.params_d.cast(),
                params_c: s.params_c.as_ref().map(ParamSet::cast),
                adam_g: cast_adam(&s.adam_g),
                adam_d: cast_adam(&s.adam_d),
                adam_c: s.adam_c.as_ref().map(cast_adam),
                gamma_state: s.gamma_state.clone(),
                iteration: s.iteration,
                rng: s.rng.clone(),
                classifier_evals: s.classifier_evals,
            })),
        };
        Checkpoint {
            config: self.config.clone(),
            payload,
        }
    }

    fn sections(&self) -> Vec<(&'static str, Vec<u8>)> {
        let section = |f: &dyn Fn(&mut Writer)| {
            let mut w = Writer(Vec::new());
            f(&mut w);
            w.0
        };
        let mut out = vec![("config", self.config.to_toml().into_bytes())];
        match &self.payload {
            Payload::Classifier { params, final_loss } => {
                out.push(("kind", b"classifier".to_vec()));
                out.push(("params.c", section(&|w| put_params(w, params))));
                out.push(("final_loss", final_loss.to_le_bytes().to_vec()));
            }
            Payload::Training(s) => {
                out.push(("kind", b"training".to_vec()));
                out.push((
                    "progress",
                    section(&|w| {
                        w.u64(s.iteration);
                        w.u64(s.classifier_evals);
                    }),
                ));
                out.push(("gamma", section(&|w| put_gamma(w, &s.gamma_state))));
                out.push(("rng", section(&|w| put_rng(w, &s.rng))));
                out.push(("params.g", section(&|w| put_params(w, &s.params_g))));
                out.push(("params.d", section(&|w| put_params(w, &s.params_d))));
                if let Some(c) = &s.params_c {
                    out.push(("params.c", section(&|w| put_params(w, c))));
                }
                out.push(("adam.g", section(&|w| put_adam(w, &s.adam_g))));
                out.push(("adam.d", section(&|w| put_adam(w, &s.adam_d))));
                if let Some(a) = &s.adam_c {
                    out.push(("adam.c", section(&|w| put_adam(w, a))));
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u8(T::DTYPE.tag());
        for (name, body) in self.sections() {
            w.str(name);
            w.bytes(&body);
        }
        w.0
    }

    fn from_sections(sections: &BTreeMap<String, &[u8]>) -> Result<Self, CliError> {
        let get = |name: &str| {
            sections
                .get(name)
                .copied()
                .ok_or_else(|| bad(format!("missing section `{name}`")))
        };
        let parse = |name: &str| -> Result<Reader, CliError> { Ok(Reader::new(get(name)?)) };
        let whole = |name: &str, r: &Reader| {
            if r.done() {
                Ok(())
            } else {
                Err(bad(format!("trailing bytes in section `{name}`")))
            }
        };
        let text = std::str::from_utf8(get("config")?).map_err(|_| bad("config is not UTF-8"))?;
        let config = RunConfig::parse(text)?;
        let payload = match get("kind")? {
            b"classifier" => {
                let mut r = parse("params.c")?;
                let params = get_params(&mut r)?;
                whole("params.c", &r)?;
                let mut fl = parse("final_loss")?;
                let final_loss = fl.f64()?;
                whole("final_loss", &fl)?;
                Payload::Classifier { params, final_loss }
            }
            b"training" => {
                let mut p = parse("progress")?;
                let (iteration, classifier_evals) = (p.u64()?, p.u64()?);
                whole("progress", &p)?;
                let read = |name: &str| -> Result<Reader, CliError> { parse(name) };
                let mut g = read("gamma")?;
                let gamma_state = get_gamma(&mut g)?;
                whole("gamma", &g)?;
                let mut rr = read("rng")?;
                let rng = get_rng(&mut rr)?;
                whole("rng", &rr)?;
                let params = |name: &str| -> Result<ParamSet<T>, CliError> {
                    let mut r = parse(name)?;
                    let p = get_params(&mut r)?;
                    whole(name, &r)?;
                    Ok(p)
                };
                let adam = |name: &str| -> Result<AdamState<T>, CliError> {
                    let mut r = parse(name)?;
                    let a = get_adam(&mut r)?;
                    whole(name, &r)?;
                    Ok(a)
                };
                let optional = |name: &str| sections.contains_key(name);
                Payload::Training(Box::new(TrainState {
                    params_g: params("params.g")?,
                    params_d: params("params.d")?,
                    params_c: optional("params.c")
                        .then(|| params("params.c"))
                        .transpose()?,
                    adam_g: adam("adam.g")?,
                    adam_d: adam("adam.d")?,
                    adam_c: optional("adam.c").then(|| adam("adam.c")).transpose()?,
                    gamma_state,
                    iteration,
                    rng,
                    classifier_evals,
                }))
            }
            other => {
                return Err(bad(format!(
                    "unknown checkpoint kind `{}`",
                    String::from_utf8_lossy(other)
                )))
            }
        };
        Ok(Self { config, payload })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

impl AnyCheckpoint {
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader::new(buf);
        if r.take(4).ok() != Some(&MAGIC[..]) {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let dtype = DType::from_tag(r.u8()?).ok_or_else(|| bad("unknown precision tag"))?;
        let mut sections = BTreeMap::new();
        while !r.done() {
            let name = r.str()?.to_string();
            let body = r.bytes()?;
            if sections.insert(name.clone(), body).is_some() {
                return Err(bad(format!("duplicate section `{name}`")));
            }
        }
        Ok(match dtype {
            DType::F64 => AnyCheckpoint::F64(Checkpoint::from_sections(&sections)?),
            DType::F32 => AnyCheckpoint::F32(Checkpoint::from_sections(&sections)?),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let buf =
            std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            CliError::Checkpoint(m) => CliError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AnyCheckpoint::F64(c) => c.to_bytes(),
            AnyCheckpoint::F32(c) => c.to_bytes(),
        }
    }

    pub fn config(&self) -> &RunConfig {
        match self {
            AnyCheckpoint::F64(c) => &c.config,
            AnyCheckpoint::F32(c) => &c.config,
        }
    }

    /// The checkpoint at the requested precision; a precision mismatch is an error.
    pub fn into_precision<T: Real>(self) -> Result<Checkpoint<T>, CliError> {
        let dtype = self.dtype();
        if dtype != T::DTYPE {
            return Err(bad(format!(
                "checkpoint holds {dtype:?} tensors, {:?} requested",
                T::DTYPE
            )));
        }
        Ok(match self {
            AnyCheckpoint::F64(c) => c.cast(),
            AnyCheckpoint::F32(c) => c.cast(),
        })
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyCheckpoint::F64(_) => DType::F64,
            AnyCheckpoint::F32(_) => DType::F32,
        }
    }

    /// Generator parameters widened to 64-bit, for generation and evaluation.
    pub fn generator_f64(&self) -> Result<ParamSet<f64>, CliError> {
        let g = match self {
            AnyCheckpoint::F64(Checkpoint {
                payload: Payload::Training(s),
                ..
            }) => s.params_g.clone(),
            AnyCheckpoint::F32(Checkpoint {
                payload: Payload::Training(s),
                ..
            }) => s.params_g.cast(),
            _ => return Err(bad("checkpoint holds no generator (classifier checkpoint)")),
        };
        Ok(g)
    }
}
