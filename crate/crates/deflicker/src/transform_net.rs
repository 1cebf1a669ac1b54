//! The recurrent image transformation network.
//!
//! Each step consumes four frames: the current and previous originals
//! (`i_t`, `i_prev`) and the current processed frame plus the previous
//! output (`p_t`, `o_prev`). Two encoder streams downsample the pairs
//! separately, merge at quarter resolution, pass through a residual trunk
//! and a convolutional LSTM, and a decoder upsamples back. Skip connections
//! come only from the processed-frame stream, and the decoder emits a
//! residual added to `p_t`, so a zero-initialized final layer makes the
//! whole network an exact identity on the processed video.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array3, ArrayD};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, VarId};
use crate::tensor_store;
use crate::video_data::{Frame, FrameSequence};

/// Version tag written into checkpoints alongside the container version.
pub const PARAMS_VERSION: u32 = 1;

/// Input frames per step: smallest spatial extent that still survives the
/// reflect padding to a multiple of 4.
const MIN_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Channel width after the first downsample; the bottleneck runs at
    /// twice this width.
    pub base_channels: usize,
    /// Residual blocks in the trunk.
    pub residual_blocks: usize,
    /// Odd kernel size shared by every convolution.
    pub kernel_size: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 32,
            residual_blocks: 5,
            kernel_size: 3,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.residual_blocks == 0 {
            return Err(Error::Config("residual_blocks must be at least 1".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// Channels carried by the bottleneck, residual trunk and LSTM state.
    pub fn trunk_channels(&self) -> usize {
        2 * self.base_channels
    }
}

/// How a parameter tensor is initialized.
enum InitRule {
    /// Uniform in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
    HeUniform { fan_in: usize },
    Zeros,
    /// Zero bias except the forget-gate slice, which starts at 1 so the
    /// LSTM initially remembers.
    LstmBias,
}

fn parameter_layout(cfg: &NetworkConfig) -> Vec<(String, Vec<usize>, InitRule)> {
    let b = cfg.base_channels;
    let t = cfg.trunk_channels();
    let k = cfg.kernel_size;
    let conv = |cout: usize, cin: usize| (vec![cout, cin, k, k], InitRule::HeUniform {
        fan_in: cin * k * k,
    });
    // Transposed kernels store (cin, cout, k, k); fan-in is still cin.
    let tconv = |cin: usize, cout: usize| (vec![cin, cout, k, k], InitRule::HeUniform {
        fan_in: cin * k * k,
    });
    let bias = |c: usize| (vec![c], InitRule::Zeros);

    let mut layout: Vec<(String, (Vec<usize>, InitRule))> = vec![
        ("enc_a.down1.weight".into(), conv(b, 6)),
        ("enc_a.down1.bias".into(), bias(b)),
        ("enc_a.down2.weight".into(), conv(t, b)),
        ("enc_a.down2.bias".into(), bias(t)),
        ("enc_b.down1.weight".into(), conv(b, 6)),
        ("enc_b.down1.bias".into(), bias(b)),
        ("enc_b.down2.weight".into(), conv(t, b)),
        ("enc_b.down2.bias".into(), bias(t)),
        ("fuse.weight".into(), conv(t, 2 * t)),
        ("fuse.bias".into(), bias(t)),
    ];
    for i in 1..=cfg.residual_blocks {
        layout.push((format!("res{i}.conv1.weight"), conv(t, t)));
        layout.push((format!("res{i}.conv1.bias"), bias(t)));
        layout.push((format!("res{i}.conv2.weight"), conv(t, t)));
        layout.push((format!("res{i}.conv2.bias"), bias(t)));
    }
    layout.extend([
        ("lstm.gates.weight".into(), conv(4 * t, 2 * t)),
        ("lstm.gates.bias".into(), (vec![4 * t], InitRule::LstmBias)),
        ("dec.up1.weight".into(), tconv(t, b)),
        ("dec.up1.bias".into(), bias(b)),
        ("dec.up2.weight".into(), tconv(b, b)),
        ("dec.up2.bias".into(), bias(b)),
        ("out.weight".into(), (vec![3, b, k, k], InitRule::Zeros)),
        ("out.bias".into(), (vec![3], InitRule::Zeros)),
    ]);
    layout
        .into_iter()
        .map(|(name, (shape, rule))| (name, shape, rule))
        .collect()
}

/// All learnable weights plus the topology that shaped them.
#[derive(Debug, Clone)]
pub struct TransformNet {
    pub config: NetworkConfig,
    pub tensors: BTreeMap<String, ArrayD<f64>>,
}

/// Hidden and cell maps of the convolutional LSTM, at quarter resolution of
/// the (padded) input.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Array3<f64>,
    pub cell: Array3<f64>,
}

/// Spatial extent after reflect padding to the next multiple of 4.
pub fn padded_dims(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(4) * 4, width.div_ceil(4) * 4)
}

/// Pads bottom and right edges by reflection (no edge repeat) up to the
/// target size. Requires `pad <= n - 1` per axis, which holds for every
/// input of at least 3 pixels padded to a multiple of 4.
fn reflect_pad(frame: &Frame, hp: usize, wp: usize) -> Frame {
    let (c, h, w) = frame.dim();
    if (h, w) == (hp, wp) {
        return frame.clone();
    }
    Array3::from_shape_fn((c, hp, wp), |(ch, y, x)| {
        let sy = if y < h { y } else { 2 * h - 2 - y };
        let sx = if x < w { x } else { 2 * w - 2 - x };
        frame[[ch, sy, sx]]
    })
}

fn crop(frame: &Frame, h: usize, w: usize) -> Frame {
    frame.slice(ndarray::s![.., ..h, ..w]).to_owned()
}

fn check_frame_extent(context: &str, h: usize, w: usize) -> Result<()> {
    if h < MIN_DIM || w < MIN_DIM {
        return Err(Error::Contract(format!(
            "{context}: frames must be at least {MIN_DIM}x{MIN_DIM}, got {h}x{w}"
        )));
    }
    Ok(())
}

impl TransformNet {
    /// Fresh parameters for `config`, deterministic in `seed`. The output
    /// projection starts at zero, so the network is the identity mapping.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = config.trunk_channels();
        let mut tensors = BTreeMap::new();
        for (name, shape, rule) in parameter_layout(&config) {
            let tensor = match rule {
                InitRule::HeUniform { fan_in } => {
                    let limit = (6.0 / fan_in as f64).sqrt();
                    ArrayD::from_shape_simple_fn(shape.as_slice(), || {
                        rng.random_range(-limit..=limit)
                    })
                }
                InitRule::Zeros => ArrayD::zeros(shape.as_slice()),
                InitRule::LstmBias => {
                    let mut bias = Array1::zeros(shape[0]);
                    bias.slice_mut(ndarray::s![t..2 * t]).fill(1.0);
                    bias.into_dyn()
                }
            };
            tensors.insert(name, tensor);
        }
        Ok(TransformNet { config, tensors })
    }

    /// Checks completeness, shapes and finiteness of the tensor map.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for (name, shape, _) in parameter_layout(&self.config) {
            let tensor = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::MissingParameter { name: name.clone() })?;
            if tensor.shape() != shape.as_slice() {
                return Err(Error::DimensionMismatch {
                    context: format!("parameter {name}"),
                    expected: format!("{shape:?}"),
                    actual: format!("{:?}", tensor.shape()),
                });
            }
            if tensor.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("parameter {name}"),
                });
            }
        }
        Ok(())
    }

    /// Zero state sized for frames of `height`x`width` (before padding).
    pub fn init_state(&self, height: usize, width: usize) -> Result<RecurrentState> {
        check_frame_extent("init_state", height, width)?;
        let (hp, wp) = padded_dims(height, width);
        let t = self.config.trunk_channels();
        Ok(RecurrentState {
            hidden: Array3::zeros((t, hp / 4, wp / 4)),
            cell: Array3::zeros((t, hp / 4, wp / 4)),
        })
    }

    /// One recurrent step. All four frames share one extent; `state` must
    /// come from [`TransformNet::init_state`] for that extent (or a prior
    /// step). Returns the output frame and the advanced state.
    pub fn step(
        &self,
        i_t: &Frame,
        i_prev: &Frame,
        p_t: &Frame,
        o_prev: &Frame,
        state: &RecurrentState,
    ) -> Result<(Frame, RecurrentState)> {
        let (c, h, w) = p_t.dim();
        for (label, f) in [("i_t", i_t), ("i_prev", i_prev), ("o_prev", o_prev)] {
            if f.dim() != (c, h, w) {
                return Err(Error::DimensionMismatch {
                    context: format!("step frame {label}"),
                    expected: format!("{:?}", (c, h, w)),
                    actual: format!("{:?}", f.dim()),
                });
            }
        }
        if c != 3 {
            return Err(Error::DimensionMismatch {
                context: "step frame channels".into(),
                expected: "3".into(),
                actual: format!("{c}"),
            });
        }
        check_frame_extent("step", h, w)?;
        let (hp, wp) = padded_dims(h, w);
        let t = self.config.trunk_channels();
        if state.hidden.dim() != (t, hp / 4, wp / 4) || state.cell.dim() != state.hidden.dim() {
            return Err(Error::DimensionMismatch {
                context: "recurrent state".into(),
                expected: format!("{:?}", (t, hp / 4, wp / 4)),
                actual: format!("{:?} / {:?}", state.hidden.dim(), state.cell.dim()),
            });
        }

        let mut tape = Tape::new();
        let bound = BoundNet::bind(&mut tape, self, false);
        let leaf = |tape: &mut Tape, f: &Frame| {
            let padded = reflect_pad(f, hp, wp);
            tape.leaf(padded.into_dyn(), false)
        };
        let vi_t = leaf(&mut tape, i_t);
        let vi_prev = leaf(&mut tape, i_prev);
        let vp_t = leaf(&mut tape, p_t);
        let vo_prev = leaf(&mut tape, o_prev);
        let vstate = BoundState {
            hidden: tape.leaf(state.hidden.clone().into_dyn(), false),
            cell: tape.leaf(state.cell.clone().into_dyn(), false),
        };
        let (vo_t, vstate_next) = bound.step(&mut tape, vi_t, vi_prev, vp_t, vo_prev, &vstate);

        let as3 = |tape: &Tape, id: VarId| -> Array3<f64> {
            tape.value(id)
                .view()
                .into_dimensionality()
                .expect("network tensors are rank 3")
                .to_owned()
        };
        let o_t = crop(&as3(&tape, vo_t), h, w);
        let next = RecurrentState {
            hidden: as3(&tape, vstate_next.hidden),
            cell: as3(&tape, vstate_next.cell),
        };
        Ok((o_t, next))
    }

    /// Runs the network over a whole video: the first output frame is the
    /// processed frame unchanged, every later frame comes from [`step`]
    /// with the previous output fed back.
    ///
    /// [`step`]: TransformNet::step
    pub fn process_video(
        &self,
        input: &FrameSequence,
        processed: &FrameSequence,
    ) -> Result<FrameSequence> {
        if input.len() != processed.len()
            || input.frame(1).dim() != processed.frame(1).dim()
        {
            return Err(Error::DimensionMismatch {
                context: "process_video sequences".into(),
                expected: format!("{} frames of {:?}", input.len(), input.frame(1).dim()),
                actual: format!(
                    "{} frames of {:?}",
                    processed.len(),
                    processed.frame(1).dim()
                ),
            });
        }
        if processed.len() == 1 {
            eprintln!("warning: single-frame video, returning the processed frame as-is");
            return Ok(processed.clone());
        }
        let (_, h, w) = processed.frame(1).dim();
        let mut state = self.init_state(h, w)?;
        let mut outputs = vec![processed.frame(1).clone()];
        for t in 2..=processed.len() {
            let o_prev = outputs.last().expect("frame 1 seeds the outputs");
            let (o_t, next) = self.step(
                input.frame(t),
                input.frame(t - 1),
                processed.frame(t),
                o_prev,
                &state,
            )?;
            outputs.push(o_t);
            state = next;
        }
        FrameSequence::new(outputs, processed.bit_depth)
    }

    /// Writes parameters plus `meta` (any JSON object, e.g. training
    /// progress) into a versioned container.
    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        let mut object = match meta {
            serde_json::Value::Null => serde_json::Map::new(),
            serde_json::Value::Object(map) => map,
            other => {
                return Err(Error::Contract(format!(
                    "checkpoint meta must be a JSON object, got {other}"
                )))
            }
        };
        object.insert("params_version".into(), PARAMS_VERSION.into());
        object.insert(
            "config".into(),
            serde_json::to_value(self.config).expect("config serializes"),
        );
        tensor_store::write_tensor_file(path, &serde_json::Value::Object(object), &self.tensors)
    }

    /// Reads a checkpoint back. Tensors beyond the model parameters (such
    /// as optimizer state) are ignored here; callers that need them read
    /// the container directly. Returns the network and the full meta block.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (meta, mut tensors) = tensor_store::read_tensor_file(path)?;
        let version = meta
            .get("params_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Contract(format!(
                "checkpoint {} has no params_version tag",
                path.display()
            )))?;
        if version != u64::from(PARAMS_VERSION) {
            return Err(Error::CheckpointVersion {
                got: version as u32,
                supported: PARAMS_VERSION,
            });
        }
        let config: NetworkConfig = serde_json::from_value(
            meta.get("config")
                .cloned()
                .ok_or_else(|| Error::Contract(format!(
                    "checkpoint {} carries no network config",
                    path.display()
                )))?,
        )
        .map_err(|e| Error::Contract(format!("bad network config in checkpoint: {e}")))?;
        let mut model = BTreeMap::new();
        for (name, _, _) in parameter_layout(&config) {
            let tensor = tensors
                .remove(&name)
                .ok_or_else(|| Error::MissingParameter { name: name.clone() })?;
            model.insert(name, tensor);
        }
        let net = TransformNet {
            config,
            tensors: model,
        };
        net.validate()?;
        Ok((net, meta))
    }
}

/// LSTM state as tape nodes, for the unrolled training graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundState {
    pub hidden: VarId,
    pub cell: VarId,
}

/// The network's parameters pushed onto a tape, once, so repeated steps in
/// an unrolled window share the same leaves (and gradients accumulate).
pub struct BoundNet {
    config: NetworkConfig,
    ids: BTreeMap<String, VarId>,
}

impl BoundNet {
    /// Pushes every parameter as a tape leaf. `trainable` decides whether
    /// gradients are tracked for them.
    pub fn bind(tape: &mut Tape, net: &TransformNet, trainable: bool) -> BoundNet {
        let ids = net
            .tensors
            .iter()
            .map(|(name, tensor)| (name.clone(), tape.leaf(tensor.clone(), trainable)))
            .collect();
        BoundNet {
            config: net.config,
            ids,
        }
    }

    /// Leaf id of a named parameter. Names follow [`TransformNet::init`].
    pub fn id(&self, name: &str) -> VarId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is bound"))
    }

    /// Iterates `(name, leaf)` pairs in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, VarId)> {
        self.ids.iter().map(|(n, id)| (n.as_str(), *id))
    }

    /// Zero state as constant leaves; `height`/`width` must be multiples
    /// of 4 (the bound graph does no padding).
    pub fn init_state(&self, tape: &mut Tape, height: usize, width: usize) -> BoundState {
        assert!(
            height % 4 == 0 && width % 4 == 0,
            "bound networks take dims divisible by 4, got {height}x{width}"
        );
        let t = self.config.trunk_channels();
        let zeros = Array3::<f64>::zeros((t, height / 4, width / 4));
        BoundState {
            hidden: tape.leaf(zeros.clone().into_dyn(), false),
            cell: tape.leaf(zeros.into_dyn(), false),
        }
    }

    fn conv(&self, tape: &mut Tape, x: VarId, name: &str, stride: usize) -> VarId {
        let w = self.id(&format!("{name}.weight"));
        let b = self.id(&format!("{name}.bias"));
        tape.conv2d(x, w, b, stride, self.config.kernel_size / 2)
    }

    fn upconv(&self, tape: &mut Tape, x: VarId, name: &str) -> VarId {
        let w = self.id(&format!("{name}.weight"));
        let b = self.id(&format!("{name}.bias"));
        // Odd kernel with this padding exactly doubles the extent.
        tape.conv_transpose2d(x, w, b, 2, self.config.kernel_size / 2, 1)
    }

    /// One recurrent step on the tape. Frames must already be padded to
    /// multiples of 4 and the state sized to match.
    pub fn step(
        &self,
        tape: &mut Tape,
        i_t: VarId,
        i_prev: VarId,
        p_t: VarId,
        o_prev: VarId,
        state: &BoundState,
    ) -> (VarId, BoundState) {
        let t = self.config.trunk_channels();

        // Stream A carries the frames the skip connections come from.
        let xa = tape.concat_c(&[p_t, o_prev]);
        let a1 = self.conv(tape, xa, "enc_a.down1", 2);
        let a1 = tape.relu(a1);
        let a2 = self.conv(tape, a1, "enc_a.down2", 2);
        let a2 = tape.relu(a2);

        let xb = tape.concat_c(&[i_t, i_prev]);
        let b1 = self.conv(tape, xb, "enc_b.down1", 2);
        let b1 = tape.relu(b1);
        let b2 = self.conv(tape, b1, "enc_b.down2", 2);
        let b2 = tape.relu(b2);

        let merged = tape.concat_c(&[a2, b2]);
        let fused = self.conv(tape, merged, "fuse", 1);
        let mut r = tape.relu(fused);

        for i in 1..=self.config.residual_blocks {
            let h1 = self.conv(tape, r, &format!("res{i}.conv1"), 1);
            let h1 = tape.relu(h1);
            let h2 = self.conv(tape, h1, &format!("res{i}.conv2"), 1);
            r = tape.add(r, h2);
        }

        // ConvLSTM over the trunk output; gates stacked (input, forget,
        // candidate, output) along channels.
        let z = tape.concat_c(&[r, state.hidden]);
        let gates = self.conv(tape, z, "lstm.gates", 1);
        let gi = tape.slice_c(gates, 0, t);
        let gi = tape.sigmoid(gi);
        let gf = tape.slice_c(gates, t, t);
        let gf = tape.sigmoid(gf);
        let gg = tape.slice_c(gates, 2 * t, t);
        let gg = tape.tanh(gg);
        let go = tape.slice_c(gates, 3 * t, t);
        let go = tape.sigmoid(go);
        let keep = tape.mul(gf, state.cell);
        let write = tape.mul(gi, gg);
        let cell = tape.add(keep, write);
        let cell_act = tape.tanh(cell);
        let hidden = tape.mul(go, cell_act);

        let d1 = self.upconv(tape, hidden, "dec.up1");
        let d1 = tape.relu(d1);
        let d1 = tape.add(d1, a1);
        let d2 = self.upconv(tape, d1, "dec.up2");
        let d2 = tape.relu(d2);
        let residual = self.conv(tape, d2, "out", 1);
        let o_t = tape.add(p_t, residual);

        (o_t, BoundState { hidden, cell })
    }
}
