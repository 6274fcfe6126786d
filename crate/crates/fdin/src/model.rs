//! The full detector: band-selection layer, stem, residual encoder,
//! Fourier-convolution attention, and mask decoder, with ablation flags
//! that swap the two frequency modules for identities. Also owns the
//! checkpoint format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::absr::{Absr, AbsrCache};
use crate::decoder::{Decoder, DecoderCache, LogitMask};
use crate::encoder::{Encoder, EncoderCache};
use crate::error::{FdinError, Result};
use crate::ffca::{Ffca, FfcaCache};
use crate::nn::{
    concat_channels, split_channels_at, ConvBnRelu, ConvBnReluCache, NamedTensor, Param, Phase,
    TensorMap, Tensors, Vol5,
};

const CHECKPOINT_MAGIC: &[u8; 8] = b"FDINCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Architecture configuration. `channels` is the encoder stage plan,
/// shallowest first; the stem maps the input to `channels[0]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub resolution: (usize, usize),
    pub t_c: usize,
    pub channels: Vec<usize>,
    pub ratio_global: f64,
    pub enable_absr: bool,
    pub enable_ffca: bool,
    /// Learn one band mask per input channel instead of a shared one.
    pub per_channel_mask: bool,
    /// Feed `concat(absr(x), x)` to the stem instead of `absr(x)` alone.
    pub concat_raw: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            resolution: (64, 112),
            t_c: 8,
            channels: vec![16, 32, 64, 128],
            ratio_global: 0.5,
            enable_absr: true,
            enable_ffca: true,
            per_channel_mask: false,
            concat_raw: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.resolution;
        if self.channels.is_empty() {
            return Err(FdinError::Config("channels must be nonempty".into()));
        }
        let div = 1usize << self.channels.len();
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(FdinError::Config(format!(
                "resolution {h}x{w} must be divisible by 2^{} for {} encoder stages",
                self.channels.len(),
                self.channels.len()
            )));
        }
        if self.t_c == 0 {
            return Err(FdinError::Config("t_c must be at least 1".into()));
        }
        if self.channels.len() < 2 {
            return Err(FdinError::Config(
                "need at least two encoder stages for the decoder pathway".into(),
            ));
        }
        if self.concat_raw && !self.enable_absr {
            return Err(FdinError::Config(
                "concat_raw requires enable_absr".into(),
            ));
        }
        if self.enable_ffca {
            crate::ffca::split_sizes(*self.channels.last().unwrap(), self.ratio_global)?;
        }
        Ok(())
    }

    fn stem_in_channels(&self) -> usize {
        if self.enable_absr && self.concat_raw {
            6
        } else {
            3
        }
    }
}

pub struct FdinModel {
    pub config: ModelConfig,
    pub absr: Option<Absr>,
    pub stem: ConvBnRelu,
    pub encoder: Encoder,
    pub ffca: Option<Ffca>,
    pub decoder: Decoder,
}

pub struct ModelCache {
    raw: Option<Vol5>,
    absr: Option<AbsrCache>,
    stem: ConvBnReluCache,
    encoder: EncoderCache,
    ffca: Option<FfcaCache>,
    decoder: DecoderCache,
}

impl FdinModel {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = config.resolution;
        let absr = if config.enable_absr {
            let per_channel = config.per_channel_mask.then_some(3);
            Some(Absr::new(h, w, per_channel, rng.gen()))
        } else {
            None
        };
        let stem = ConvBnRelu::new(config.stem_in_channels(), config.channels[0], (3, 3, 3), 1, &mut rng);
        let encoder = Encoder::new(config.channels[0], &config.channels, &mut rng);
        let ffca = if config.enable_ffca {
            Some(Ffca::new(
                *config.channels.last().unwrap(),
                config.ratio_global,
                &mut rng,
            )?)
        } else {
            None
        };
        let decoder = Decoder::new(&config.channels, &mut rng);
        Ok(FdinModel {
            config,
            absr,
            stem,
            encoder,
            ffca,
            decoder,
        })
    }

    fn check_input(&self, x: &Vol5) -> Result<()> {
        let (_, t, c, h, w) = x.dim();
        let (mh, mw) = self.config.resolution;
        if c != 3 {
            return Err(FdinError::ShapeMismatch(format!(
                "model expects 3-channel frames, got {c}"
            )));
        }
        if (h, w) != (mh, mw) {
            return Err(FdinError::ResolutionMismatch {
                context: "model input".into(),
                expected_h: mh,
                expected_w: mw,
                got_h: h,
                got_w: w,
            });
        }
        if t == 0 {
            return Err(FdinError::ShapeMismatch("empty clip window".into()));
        }
        Ok(())
    }

    /// Full forward pass; the cache is only produced in training phase.
    pub fn forward(&mut self, x: &Vol5, phase: Phase) -> Result<(LogitMask, Option<ModelCache>)> {
        self.check_input(x)?;
        let (features, absr_cache, raw) = match &self.absr {
            Some(absr) => {
                let (a, cache) = absr.forward(x)?;
                if self.config.concat_raw {
                    (concat_channels(&a, x), Some(cache), Some(x.clone()))
                } else {
                    (a, Some(cache), None)
                }
            }
            None => (x.clone(), None, None),
        };
        let (stem_out, stem_cache) = self.stem.forward(&features, phase);
        let (pyramid, enc_cache) = self.encoder.forward(&stem_out, phase)?;
        let deep = pyramid.last().expect("nonempty pyramid");
        let (deep, ffca_cache) = match &mut self.ffca {
            Some(ffca) => {
                let (d, c) = ffca.forward(deep, phase)?;
                (d, Some(c))
            }
            None => (deep.clone(), None),
        };
        let (logits, dec_cache) = self.decoder.forward(&pyramid, &deep, phase)?;
        let cache = match phase {
            Phase::Train => Some(ModelCache {
                raw,
                absr: absr_cache,
                stem: stem_cache,
                encoder: enc_cache,
                ffca: ffca_cache,
                decoder: dec_cache,
            }),
            Phase::Eval => None,
        };
        Ok((logits, cache))
    }

    /// Convenience eval-phase forward.
    pub fn infer(&mut self, x: &Vol5) -> Result<LogitMask> {
        Ok(self.forward(x, Phase::Eval)?.0)
    }

    /// Backward from the logit gradient; accumulates parameter gradients
    /// and returns the gradient with respect to the input frames.
    pub fn backward(&mut self, cache: &ModelCache, dlogits: &Vol5) -> Vol5 {
        let (ddeep, mut dpyramid) = self.decoder.backward(&cache.decoder, dlogits);
        let ddeep = match (&mut self.ffca, &cache.ffca) {
            (Some(ffca), Some(fc)) => ffca.backward(fc, &ddeep),
            _ => ddeep,
        };
        {
            let last = dpyramid.last_mut().expect("nonempty pyramid");
            *last += &ddeep;
        }
        let dstem_out = self.encoder.backward(&cache.encoder, dpyramid);
        let dfeatures = self.stem.backward(&cache.stem, &dstem_out);
        match (&mut self.absr, &cache.absr) {
            (Some(absr), Some(ac)) => {
                if cache.raw.is_some() {
                    let (da, draw) = split_channels_at(&dfeatures, 3);
                    absr.backward(ac, &da) + draw
                } else {
                    absr.backward(ac, &dfeatures)
                }
            }
            _ => dfeatures,
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.value.len());
        n
    }

    /// Write a checkpoint: versioned header (format version, config digest,
    /// resolution, model config) followed by named parameter blobs.
    pub fn save_checkpoint(&self, path: &Path, config_digest: &str) -> Result<()> {
        let mut tensors = Vec::new();
        self.collect_tensors("", &mut tensors);
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            config_digest: config_digest.to_string(),
            resolution: self.config.resolution,
            model: self.config.clone(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| FdinError::Checkpoint(format!("header encode: {e}")))?;
        let file = File::create(path)
            .map_err(|e| FdinError::io(format!("create {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| FdinError::io(format!("write {}", path.display()), e);
        w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(io_err)?;
        w.write_u32::<LittleEndian>(header_json.len() as u32)
            .map_err(io_err)?;
        w.write_all(&header_json).map_err(io_err)?;
        w.write_u32::<LittleEndian>(tensors.len() as u32).map_err(io_err)?;
        for t in &tensors {
            let name = t.name.as_bytes();
            w.write_u16::<LittleEndian>(name.len() as u16).map_err(io_err)?;
            w.write_all(name).map_err(io_err)?;
            w.write_u8(t.shape.len() as u8).map_err(io_err)?;
            for &d in &t.shape {
                w.write_u32::<LittleEndian>(d as u32).map_err(io_err)?;
            }
            for &v in &t.data {
                w.write_f32::<LittleEndian>(v).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    /// Load a checkpoint written by [`FdinModel::save_checkpoint`],
    /// verifying magic, version, and tensor completeness.
    pub fn load_checkpoint(path: &Path) -> Result<(FdinModel, CheckpointHeader)> {
        let file = File::open(path)
            .map_err(|e| FdinError::io(format!("open {}", path.display()), e))?;
        let mut r = BufReader::new(file);
        let io_err = |e: std::io::Error| FdinError::io(format!("read {}", path.display()), e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(FdinError::Checkpoint(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
        if version != CHECKPOINT_VERSION {
            return Err(FdinError::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut header_buf = vec![0u8; header_len];
        r.read_exact(&mut header_buf).map_err(io_err)?;
        let header: CheckpointHeader = serde_json::from_slice(&header_buf)
            .map_err(|e| FdinError::Checkpoint(format!("header decode: {e}")))?;
        let count = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut map = TensorMap::new();
        for _ in 0..count {
            let name_len = r.read_u16::<LittleEndian>().map_err(io_err)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf).map_err(io_err)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| FdinError::Checkpoint(format!("tensor name: {e}")))?;
            let ndim = r.read_u8().map_err(io_err)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.read_u32::<LittleEndian>().map_err(io_err)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(io_err)?;
            map.insert(name, (shape, data));
        }
        let mut model = FdinModel::build(header.model.clone(), 0)?;
        model.load_tensors("", &mut map)?;
        if !map.is_empty() {
            let mut extra: Vec<_> = map.keys().cloned().collect();
            extra.sort();
            return Err(FdinError::Checkpoint(format!(
                "unexpected tensors in checkpoint: {}",
                extra.join(", ")
            )));
        }
        Ok((model, header))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config_digest: String,
    pub resolution: (usize, usize),
    pub model: ModelConfig,
}

impl Tensors for FdinModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(a) = &mut self.absr {
            a.visit_params(&crate::nn::join(prefix, "absr"), f);
        }
        self.stem.visit_params(&crate::nn::join(prefix, "stem"), f);
        self.encoder
            .visit_params(&crate::nn::join(prefix, "encoder"), f);
        if let Some(x) = &mut self.ffca {
            x.visit_params(&crate::nn::join(prefix, "ffca"), f);
        }
        self.decoder
            .visit_params(&crate::nn::join(prefix, "decoder"), f);
    }

    fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        if let Some(a) = &self.absr {
            a.collect_tensors(&crate::nn::join(prefix, "absr"), out);
        }
        self.stem.collect_tensors(&crate::nn::join(prefix, "stem"), out);
        self.encoder
            .collect_tensors(&crate::nn::join(prefix, "encoder"), out);
        if let Some(x) = &self.ffca {
            x.collect_tensors(&crate::nn::join(prefix, "ffca"), out);
        }
        self.decoder
            .collect_tensors(&crate::nn::join(prefix, "decoder"), out);
    }

    fn load_tensors(&mut self, prefix: &str, src: &mut TensorMap) -> Result<()> {
        if let Some(a) = &mut self.absr {
            a.load_tensors(&crate::nn::join(prefix, "absr"), src)?;
        }
        self.stem.load_tensors(&crate::nn::join(prefix, "stem"), src)?;
        self.encoder
            .load_tensors(&crate::nn::join(prefix, "encoder"), src)?;
        if let Some(x) = &mut self.ffca {
            x.load_tensors(&crate::nn::join(prefix, "ffca"), src)?;
        }
        self.decoder
            .load_tensors(&crate::nn::join(prefix, "decoder"), src)
    }
}
