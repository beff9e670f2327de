//! The dual-aspect encoder/decoder regressor.
//!
//! A window arrives time-oriented, `(T_w + stat_rows) × k`. The sensor
//! encoder sees its transpose (one row per sensor), the time-step encoder sees
//! it as is, and the two feature maps are fused into a time-aligned memory
//! for a causally masked decoder whose flattened output feeds a small
//! regression head.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    causal_mask, multi_head_attention, AttentionParams, AttentionRecord, AttentionSite,
    AttentionTag,
};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Architecture variants used for ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Variant {
    /// Sensor and time-step encoders in parallel, fused.
    #[default]
    #[serde(rename = "full")]
    Full,
    /// Time-step encoder only; structurally a vanilla transformer.
    #[serde(rename = "vanilla")]
    NoSensorEncoder,
    /// Sensor encoder only.
    #[serde(rename = "no-time")]
    NoTimestepEncoder,
    /// Sensor encoder feeding the time-step encoder.
    #[serde(rename = "series")]
    Series,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoSensorEncoder,
        Variant::NoTimestepEncoder,
        Variant::Series,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSensorEncoder => "vanilla",
            Variant::NoTimestepEncoder => "no-time",
            Variant::Series => "series",
        }
    }

    pub fn has_sensor_encoder(self) -> bool {
        !matches!(self, Variant::NoSensorEncoder)
    }

    pub fn has_time_encoder(self) -> bool {
        !matches!(self, Variant::NoTimestepEncoder)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "vanilla" | "no-sensor" | "no_sensor_encoder" => Ok(Variant::NoSensorEncoder),
            "no-time" | "no_timestep_encoder" => Ok(Variant::NoTimestepEncoder),
            "series" => Ok(Variant::Series),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Width of each attention head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadWidth {
    /// Every head works at `d_model`; the output projection is `h·d_model × d_model`.
    #[default]
    Full,
    /// Heads of width `d_model / h`.
    Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DastConfig {
    pub d_model: usize,
    pub n_encoder_blocks: usize,
    pub n_decoder_blocks: usize,
    pub heads: usize,
    pub window: usize,
    pub sensor_count: usize,
    pub stat_rows: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub head_width: HeadWidth,
    /// Inner width of the position-wise feed-forward sublayers.
    pub ffn_dim: usize,
    /// Hidden units of the regression head.
    pub output_hidden: usize,
}

impl Default for DastConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_encoder_blocks: 2,
            n_decoder_blocks: 1,
            heads: 4,
            window: 40,
            sensor_count: 14,
            stat_rows: 2,
            dropout: 0.2,
            variant: Variant::Full,
            head_width: HeadWidth::Full,
            ffn_dim: 64,
            output_hidden: 64,
        }
    }
}

impl DastConfig {
    /// Rows of a time-oriented window: real time steps plus statistics.
    pub fn time_len(&self) -> usize {
        self.window + self.stat_rows
    }

    pub fn head_dim(&self) -> usize {
        match self.head_width {
            HeadWidth::Full => self.d_model,
            HeadWidth::Split => self.d_model / self.heads.max(1),
        }
    }

    /// Rows of the memory the decoder cross-attends over.
    pub fn memory_len(&self) -> usize {
        match self.variant {
            Variant::NoTimestepEncoder => self.sensor_count,
            _ => self.time_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_encoder_blocks", self.n_encoder_blocks),
            ("n_decoder_blocks", self.n_decoder_blocks),
            ("heads", self.heads),
            ("window", self.window),
            ("sensor_count", self.sensor_count),
            ("ffn_dim", self.ffn_dim),
            ("output_hidden", self.output_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.head_width == HeadWidth::Split && !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "split heads need d_model ({}) divisible by heads ({})",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Sinusoidal position table: `P[t, 2i] = sin(t / 10000^(2i/D))`,
/// `P[t, 2i+1] = cos(t / 10000^(2i/D))`, positions from 0.
pub fn positional_encoding(len: usize, d_model: usize) -> Tensor {
    let mut p = Tensor::zeros(&[len, d_model]);
    for t in 0..len {
        for c in 0..d_model {
            let pair = (c / 2) * 2;
            let angle = t as f64 / libm::pow(10000.0, pair as f64 / d_model as f64);
            let v = if c % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            };
            p.set(t, c, v);
        }
    }
    p
}

/// Parameter count implied by a configuration, computed from layer shapes
/// alone.
pub fn analytic_param_count(c: &DastConfig) -> usize {
    let (d, f, h, dh) = (c.d_model, c.ffn_dim, c.heads, c.head_dim());
    let (k, lt) = (c.sensor_count, c.time_len());
    let attn = 4 * h * d * dh;
    let norm = 2 * d;
    let ffn = d * f + f + f * d + d;
    let enc_layer = attn + ffn + 2 * norm;
    let encoder = |input: usize| input * d + d + c.n_encoder_blocks * enc_layer;
    let dec_layer = 2 * attn + ffn + 3 * norm;
    let head = lt * d * c.output_hidden + c.output_hidden + c.output_hidden + 1;
    let decoder = k * d + d + c.n_decoder_blocks * dec_layer + head;
    decoder
        + match c.variant {
            Variant::Full => encoder(lt) + encoder(k) + lt * (k + lt),
            Variant::NoSensorEncoder => encoder(k),
            Variant::NoTimestepEncoder => encoder(lt),
            Variant::Series => encoder(lt) + d * lt + lt + encoder(k),
        }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b }
    }

    fn apply(&self, tape: &mut Tape, binding: &Binding, x: Var) -> Result<Var> {
        tape.affine(x, binding[self.w], binding[self.b])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn init(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::filled(&[d], 1.0));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d]));
        Self { gain, bias }
    }

    fn apply(&self, tape: &mut Tape, binding: &Binding, x: Var) -> Result<Var> {
        tape.layer_norm(x, binding[self.gain], binding[self.bias])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct FeedForward {
    inner: Linear,
    outer: Linear,
}

impl FeedForward {
    fn init(store: &mut ParamStore, name: &str, d: usize, f: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            inner: Linear::init(store, &format!("{name}.ff1"), d, f, rng),
            outer: Linear::init(store, &format!("{name}.ff2"), f, d, rng),
        }
    }

    fn apply(&self, tape: &mut Tape, binding: &Binding, x: Var) -> Result<Var> {
        let h = self.inner.apply(tape, binding, x)?;
        let h = tape.relu(h);
        self.outer.apply(tape, binding, h)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct EncoderLayer {
    attn: AttentionParams,
    norm1: Norm,
    ffn: FeedForward,
    norm2: Norm,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Encoder {
    embed: Linear,
    layers: Vec<EncoderLayer>,
    site: AttentionSite,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct DecoderLayer {
    self_attn: AttentionParams,
    norm1: Norm,
    cross_attn: AttentionParams,
    norm2: Norm,
    ffn: FeedForward,
    norm3: Norm,
}

/// State of one forward pass: the tape, parameter handles, dropout mode and
/// an optional sink for attention weights.
pub struct Pass<'a> {
    pub tape: &'a mut Tape,
    pub binding: Binding,
    pub training: bool,
    pub rng: &'a mut dyn RngCore,
    pub records: Option<Vec<AttentionRecord>>,
}

/// Configuration plus every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct DastModel {
    config: DastConfig,
    store: ParamStore,
    sensor: Option<Encoder>,
    time: Option<Encoder>,
    fusion: Option<ParamId>,
    series_bridge: Option<Linear>,
    dec_embed: Linear,
    dec_layers: Vec<DecoderLayer>,
    head_hidden: Linear,
    head_out: Linear,
}

impl DastModel {
    /// Builds a model with Glorot-uniform weights drawn from `seed`.
    pub fn new(config: DastConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let c = &config;
        let (d, k, lt) = (c.d_model, c.sensor_count, c.time_len());
        let mut store = ParamStore::new();

        let encoder = |store: &mut ParamStore, name: &str, input: usize, site, rng: &mut ChaCha8Rng| {
            let embed = Linear::init(store, &format!("{name}.embed"), input, d, rng);
            let layers = (0..c.n_encoder_blocks)
                .map(|l| {
                    let p = format!("{name}.layer{l}");
                    EncoderLayer {
                        attn: AttentionParams::init(store, &format!("{p}.attn"), d, c.heads, c.head_dim(), rng),
                        norm1: Norm::init(store, &format!("{p}.norm1"), d),
                        ffn: FeedForward::init(store, &p, d, c.ffn_dim, rng),
                        norm2: Norm::init(store, &format!("{p}.norm2"), d),
                    }
                })
                .collect();
            Encoder { embed, layers, site }
        };

        let sensor = c
            .variant
            .has_sensor_encoder()
            .then(|| encoder(&mut store, "sensor", lt, AttentionSite::Sensor, rng));
        let series_bridge = (c.variant == Variant::Series)
            .then(|| Linear::init(&mut store, "series_bridge", d, lt, rng));
        let time = c
            .variant
            .has_time_encoder()
            .then(|| encoder(&mut store, "time", k, AttentionSite::TimeStep, rng));
        let fusion = (c.variant == Variant::Full)
            .then(|| store.add_glorot("fusion.w", lt, k + lt, rng));

        let dec_embed = Linear::init(&mut store, "decoder.embed", k, d, rng);
        let dec_layers = (0..c.n_decoder_blocks)
            .map(|l| {
                let p = format!("decoder.layer{l}");
                DecoderLayer {
                    self_attn: AttentionParams::init(&mut store, &format!("{p}.self_attn"), d, c.heads, c.head_dim(), rng),
                    norm1: Norm::init(&mut store, &format!("{p}.norm1"), d),
                    cross_attn: AttentionParams::init(&mut store, &format!("{p}.cross_attn"), d, c.heads, c.head_dim(), rng),
                    norm2: Norm::init(&mut store, &format!("{p}.norm2"), d),
                    ffn: FeedForward::init(&mut store, &p, d, c.ffn_dim, rng),
                    norm3: Norm::init(&mut store, &format!("{p}.norm3"), d),
                }
            })
            .collect();
        let head_hidden = Linear::init(&mut store, "head.hidden", lt * d, c.output_hidden, rng);
        let head_out = Linear::init(&mut store, "head.out", c.output_hidden, 1, rng);

        Ok(Self {
            config,
            store,
            sensor,
            time,
            fusion,
            series_bridge,
            dec_embed,
            dec_layers,
            head_hidden,
            head_out,
        })
    }

    pub fn config(&self) -> &DastConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        let updated = DastConfig { dropout: rate, ..self.config.clone() };
        updated.validate()?;
        self.config = updated;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.store.element_count()
    }

    /// Names of every parameter belonging to the given encoder branch.
    pub fn encoder_param_names(&self, site: AttentionSite) -> Vec<String> {
        let prefix = match site {
            AttentionSite::Sensor => "sensor.",
            AttentionSite::TimeStep => "time.",
            _ => "decoder.",
        };
        self.store
            .params()
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.name.clone())
            .collect()
    }

    /// Name of the output bias, the one parameter a zeroed model still
    /// predicts through.
    pub fn output_bias(&self) -> ParamId {
        self.head_out.b
    }

    /// Starts a pass. With `track_grads` the parameters become tape leaves,
    /// otherwise they are stored as constants.
    pub fn begin_pass<'a>(
        &self,
        tape: &'a mut Tape,
        training: bool,
        track_grads: bool,
        rng: &'a mut dyn RngCore,
        capture: bool,
    ) -> Pass<'a> {
        let binding = if track_grads {
            self.store.bind(tape)
        } else {
            self.store.bind_frozen(tape)
        };
        Pass {
            tape,
            binding,
            training,
            rng,
            records: capture.then(Vec::new),
        }
    }

    fn check_window(&self, window: &Tensor) -> Result<()> {
        let expect = [self.config.time_len(), self.config.sensor_count];
        if window.shape() != expect {
            return Err(Error::Dimension {
                op: "window",
                lhs: expect.to_vec(),
                rhs: window.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn sublayer_out(&self, pass: &mut Pass<'_>, x: Var, out: Var, norm: &Norm) -> Result<Var> {
        let out = pass
            .tape
            .dropout(out, self.config.dropout, pass.training, &mut *pass.rng)?;
        let sum = pass.tape.add(x, out)?;
        norm.apply(pass.tape, &pass.binding, sum)
    }

    fn run_encoder(&self, pass: &mut Pass<'_>, enc: &Encoder, rows: Var) -> Result<Var> {
        let emb = enc.embed.apply(pass.tape, &pass.binding, rows)?;
        let (len, d) = pass.tape.value(emb).dims()?;
        let pe = pass.tape.constant(positional_encoding(len, d));
        let mut x = pass.tape.add(emb, pe)?;
        for (l, layer) in enc.layers.iter().enumerate() {
            let mut records = pass.records.take();
            let attn = multi_head_attention(
                pass.tape,
                x,
                x,
                &layer.attn,
                &pass.binding,
                None,
                records.as_mut().map(|r| (r, AttentionTag { site: enc.site, layer: l })),
            );
            pass.records = records;
            let attn = attn?;
            x = self.sublayer_out(pass, x, attn, &layer.norm1)?;
            let ff = layer.ffn.apply(pass.tape, &pass.binding, x)?;
            x = self.sublayer_out(pass, x, ff, &layer.norm2)?;
        }
        Ok(x)
    }

    /// Sensor-aspect features `F_s` (`k × d_model`) from a time-oriented
    /// window variable.
    pub fn encode_sensor(&self, pass: &mut Pass<'_>, window: Var) -> Result<Var> {
        let enc = self
            .sensor
            .as_ref()
            .ok_or_else(|| Error::Config(format!("variant {} has no sensor encoder", self.config.variant)))?;
        let rows = pass.tape.transpose(window)?;
        self.run_encoder(pass, enc, rows)
    }

    /// Time-step-aspect features `F_t` (`(T_w + stat_rows) × d_model`).
    pub fn encode_timestep(&self, pass: &mut Pass<'_>, window: Var) -> Result<Var> {
        let enc = self
            .time
            .as_ref()
            .ok_or_else(|| Error::Config(format!("variant {} has no time-step encoder", self.config.variant)))?;
        self.run_encoder(pass, enc, window)
    }

    /// Mixes `[F_s; F_t]` along the sequence axis: `W_f · concat_rows(F_s, F_t)`.
    pub fn fuse(&self, pass: &mut Pass<'_>, f_s: Var, f_t: Var) -> Result<Var> {
        let w = self
            .fusion
            .ok_or_else(|| Error::Config("only the full variant has a fusion layer".into()))?;
        fuse_rows(pass.tape, f_s, f_t, pass.binding[w])
    }

    /// Embedded decoder input: the time-oriented window through its own
    /// embedding plus positions.
    pub fn decoder_input(&self, pass: &mut Pass<'_>, window: Var) -> Result<Var> {
        let emb = self.dec_embed.apply(pass.tape, &pass.binding, window)?;
        let (len, d) = pass.tape.value(emb).dims()?;
        let pe = pass.tape.constant(positional_encoding(len, d));
        pass.tape.add(emb, pe)
    }

    /// Masked self-attention sublayer (with Add & Norm) of decoder layer `l`.
    pub fn decoder_self_block(&self, pass: &mut Pass<'_>, l: usize, x: Var) -> Result<Var> {
        let layer = self
            .dec_layers
            .get(l)
            .ok_or_else(|| Error::Usage(format!("decoder layer {l} does not exist")))?;
        let len = pass.tape.value(x).rows();
        let mask = causal_mask(len);
        let mut records = pass.records.take();
        let attn = multi_head_attention(
            pass.tape,
            x,
            x,
            &layer.self_attn,
            &pass.binding,
            Some(&mask),
            records.as_mut().map(|r| (r, AttentionTag { site: AttentionSite::DecoderSelf, layer: l })),
        );
        pass.records = records;
        self.sublayer_out(pass, x, attn?, &layer.norm1)
    }

    /// Decoder stack, flatten and regression head. Returns a `[1]` tensor.
    pub fn decode(&self, pass: &mut Pass<'_>, memory: Var, window: Var) -> Result<Var> {
        let (_, md) = pass.tape.value(memory).dims()?;
        if md != self.config.d_model {
            return Err(Error::Dimension {
                op: "decode memory",
                lhs: vec![self.config.memory_len(), self.config.d_model],
                rhs: pass.tape.value(memory).shape().to_vec(),
            });
        }
        let mut x = self.decoder_input(pass, window)?;
        for (l, layer) in self.dec_layers.iter().enumerate() {
            x = self.decoder_self_block(pass, l, x)?;
            let mut records = pass.records.take();
            let cross = multi_head_attention(
                pass.tape,
                x,
                memory,
                &layer.cross_attn,
                &pass.binding,
                None,
                records.as_mut().map(|r| (r, AttentionTag { site: AttentionSite::DecoderCross, layer: l })),
            );
            pass.records = records;
            x = self.sublayer_out(pass, x, cross?, &layer.norm2)?;
            let ff = layer.ffn.apply(pass.tape, &pass.binding, x)?;
            x = self.sublayer_out(pass, x, ff, &layer.norm3)?;
        }
        let n = pass.tape.value(x).numel();
        let flat = pass.tape.reshape(x, vec![1, n])?;
        let h = self.head_hidden.apply(pass.tape, &pass.binding, flat)?;
        let h = pass.tape.relu(h);
        let out = self.head_out.apply(pass.tape, &pass.binding, h)?;
        pass.tape.reshape(out, vec![1])
    }

    /// Decoder memory for the configured variant.
    pub fn memory(&self, pass: &mut Pass<'_>, window: Var) -> Result<Var> {
        match self.config.variant {
            Variant::Full => {
                let f_s = self.encode_sensor(pass, window)?;
                let f_t = self.encode_timestep(pass, window)?;
                self.fuse(pass, f_s, f_t)
            }
            Variant::NoSensorEncoder => self.encode_timestep(pass, window),
            Variant::NoTimestepEncoder => self.encode_sensor(pass, window),
            Variant::Series => {
                let f_s = self.encode_sensor(pass, window)?;
                let bridge = self.series_bridge.as_ref().expect("series bridge");
                // k × d_model → k × L_t, then back to time orientation
                let back = bridge.apply(pass.tape, &pass.binding, f_s)?;
                let reoriented = pass.tape.transpose(back)?;
                self.encode_timestep(pass, reoriented)
            }
        }
    }

    /// Full forward pass on a time-oriented window variable.
    pub fn forward_var(&self, pass: &mut Pass<'_>, window: Var) -> Result<Var> {
        self.check_window(pass.tape.value(window))?;
        let memory = self.memory(pass, window)?;
        self.decode(pass, memory, window)
    }

    /// Full forward pass; places `window` on the tape as a constant.
    pub fn forward(&self, pass: &mut Pass<'_>, window: &Tensor) -> Result<Var> {
        self.check_window(window)?;
        let w = pass.tape.constant(window.clone());
        self.forward_var(pass, w)
    }

    /// Eval-mode prediction on a fresh tape.
    pub fn predict(&self, window: &Tensor) -> Result<f64> {
        Ok(self.predict_with_attention(window, false)?.0)
    }

    /// Eval-mode prediction, optionally capturing every attention matrix.
    pub fn predict_with_attention(
        &self,
        window: &Tensor,
        capture: bool,
    ) -> Result<(f64, Vec<AttentionRecord>)> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pass = self.begin_pass(&mut tape, false, false, &mut rng, capture);
        let out = self.forward(&mut pass, window)?;
        let records = pass.records.take().unwrap_or_default();
        Ok((tape.value(out).data()[0], records))
    }
}

/// `w_f · concat_rows(f_s, f_t)`; `w_f` is `L_t × (k + L_t)`.
pub fn fuse_rows(tape: &mut Tape, f_s: Var, f_t: Var, w_f: Var) -> Result<Var> {
    let stacked = tape.concat_rows(f_s, f_t)?;
    tape.matmul(w_f, stacked)
}

/// Column means of sensor-encoder and time-step-encoder attention matrices,
/// averaged over heads, layers and windows: the mean weight each sensor and
/// each time step receives.
pub fn average_attention(records: &[AttentionRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mean_for = |site: AttentionSite| -> Result<Vec<f64>> {
        let mut acc: Option<Vec<f64>> = None;
        let mut count = 0usize;
        for r in records.iter().filter(|r| r.site == site) {
            let (rows, cols) = r.weights.dims()?;
            let acc = acc.get_or_insert_with(|| vec![0.0; cols]);
            if acc.len() != cols {
                return Err(Error::Dimension {
                    op: "average_attention",
                    lhs: vec![acc.len()],
                    rhs: vec![cols],
                });
            }
            for i in 0..rows {
                for (a, w) in acc.iter_mut().zip(r.weights.row(i)) {
                    *a += w / rows as f64;
                }
            }
            count += 1;
        }
        let mut acc = acc.ok_or_else(|| {
            Error::Usage(format!("no {site:?} attention records to average"))
        })?;
        acc.iter_mut().for_each(|a| *a /= count as f64);
        Ok(acc)
    };
    Ok((mean_for(AttentionSite::Sensor)?, mean_for(AttentionSite::TimeStep)?))
}
