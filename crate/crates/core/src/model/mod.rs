//! Small ViT-style video geometry network.
//!
//! Frames are cut into patches and embedded with learned spatial and
//! frame-index embeddings. The backbone alternates intra-frame attention
//! with chunk attention across frames; a frame-local decoder follows, then
//! tokens are unpatchified into a feature map read by two convolutional
//! heads, which also see the input frames through a skip convolution. The point head exponentiates its z channel so depth (the z channel
//! of the point map) is strictly positive; the normal head is normalized
//! per pixel.

mod config;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::ModelConfig;

use crate::attention::{build_mask, expand_mask, ChunkPartition, InferenceMode, KeyMask, KvCache, Mask};
use crate::autograd::{dims4, patchify, Grads, Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::z_channel;
use crate::tensor::Tensor;

/// Per-frame predictions for a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryOutput {
    /// `[N×3×H×W]` camera-frame XYZ, arbitrary scale.
    pub points: Tensor,
    /// `[N×H×W]`, the z channel of `points`.
    pub depth: Tensor,
    /// `[N×3×H×W]` unit vectors.
    pub normals: Tensor,
}

impl GeometryOutput {
    pub fn from_maps(points: Tensor, normals: Tensor) -> Result<Self> {
        let depth = z_channel(&points)?;
        Ok(GeometryOutput {
            points,
            depth,
            normals,
        })
    }

    pub fn frames(&self) -> usize {
        self.points.dims()[0]
    }

    /// Concatenates outputs along the frame axis.
    pub fn concat(parts: &[GeometryOutput]) -> Result<Self> {
        let p: Vec<&Tensor> = parts.iter().map(|o| &o.points).collect();
        let d: Vec<&Tensor> = parts.iter().map(|o| &o.depth).collect();
        let n: Vec<&Tensor> = parts.iter().map(|o| &o.normals).collect();
        Ok(GeometryOutput {
            points: Tensor::concat_rows(&p)?,
            depth: Tensor::concat_rows(&d)?,
            normals: Tensor::concat_rows(&n)?,
        })
    }

    pub fn frame(&self, i: usize) -> GeometryOutput {
        GeometryOutput {
            points: self.points.slice_rows(i, i + 1),
            depth: self.depth.slice_rows(i, i + 1),
            normals: self.normals.slice_rows(i, i + 1),
        }
    }
}

#[derive(Clone, Debug)]
struct BlockParams {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct HeadParams {
    w1: usize,
    b1: usize,
    skip_w: usize,
    skip_b: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    patch_w: usize,
    patch_b: usize,
    spatial: usize,
    frame: usize,
    backbone: Vec<BlockParams>,
    decoder: Vec<BlockParams>,
    final_g: usize,
    final_b: usize,
    unpatch_w: usize,
    unpatch_b: usize,
    point: HeadParams,
    normal: HeadParams,
}

struct Builder {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    fn uniform(&mut self, name: String, dims: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let rng = &mut self.rng;
        let t = Tensor::from_fn(dims.to_vec(), |_| rng.gen_range(-bound..bound));
        self.push(name, t)
    }

    fn constant(&mut self, name: String, dims: &[usize], v: f32) -> usize {
        self.push(name, Tensor::full(dims.to_vec(), v))
    }

    fn block(&mut self, prefix: &str, d: usize, hidden: usize) -> BlockParams {
        let p = |s: &str| format!("{prefix}.{s}");
        BlockParams {
            ln1_g: self.constant(p("ln1.gain"), &[d], 1.0),
            ln1_b: self.constant(p("ln1.bias"), &[d], 0.0),
            wq: self.uniform(p("attn.wq"), &[d, d], d),
            bq: self.constant(p("attn.bq"), &[d], 0.0),
            wk: self.uniform(p("attn.wk"), &[d, d], d),
            bk: self.constant(p("attn.bk"), &[d], 0.0),
            wv: self.uniform(p("attn.wv"), &[d, d], d),
            bv: self.constant(p("attn.bv"), &[d], 0.0),
            wo: self.uniform(p("attn.wo"), &[d, d], d),
            bo: self.constant(p("attn.bo"), &[d], 0.0),
            ln2_g: self.constant(p("ln2.gain"), &[d], 1.0),
            ln2_b: self.constant(p("ln2.bias"), &[d], 0.0),
            w1: self.uniform(p("mlp.w1"), &[d, hidden], d),
            b1: self.constant(p("mlp.b1"), &[hidden], 0.0),
            w2: self.uniform(p("mlp.w2"), &[hidden, d], hidden),
            b2: self.constant(p("mlp.b2"), &[d], 0.0),
        }
    }

    fn head(&mut self, prefix: &str, cin: usize, image: usize, hidden: usize) -> HeadParams {
        let p = |s: &str| format!("{prefix}.{s}");
        HeadParams {
            w1: self.uniform(p("conv1.weight"), &[hidden, cin, 3, 3], (cin + image) * 9),
            b1: self.constant(p("conv1.bias"), &[hidden], 0.0),
            skip_w: self.uniform(p("skip.weight"), &[hidden, image, 3, 3], (cin + image) * 9),
            skip_b: self.constant(p("skip.bias"), &[hidden], 0.0),
            w2: self.uniform(p("conv2.weight"), &[3, hidden, 3, 3], hidden * 9),
            b2: self.constant(p("conv2.bias"), &[3], 0.0),
        }
    }
}

/// How the chunk-attention layers see other frames.
pub(crate) enum Temporal<'c> {
    /// One pass over all frames under a token-level mask.
    Masked(&'c Mask),
    /// Chunkwise with cached keys and values of earlier chunks.
    Cached(&'c mut KvCache),
    /// Chunk-attention layers are bypassed (frame-local network only).
    #[cfg_attr(not(test), allow(dead_code))]
    Skip,
}

/// Graph handles produced by one forward pass.
pub struct Trace {
    pub points: Var,
    pub normals: Var,
    params: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    layout: Layout,
    chunked: Vec<bool>,
}

/// KV caches of a model's chunk-attention layers for one sequence.
#[derive(Clone, Debug)]
pub struct ModelCache {
    kv: KvCache,
    height: usize,
    width: usize,
}

impl ModelCache {
    pub fn next_frame(&self) -> usize {
        self.kv.next_frame()
    }

    pub fn peak_frames(&self) -> usize {
        self.kv.peak_frames()
    }

    pub fn frames_cached(&self) -> usize {
        self.kv.frames_cached()
    }

    pub fn reset(&mut self) {
        self.kv.reset();
    }
}

impl Model {
    /// Deterministic initialization from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let p = config.patch_size;
        let hidden = d * config.mlp_ratio;
        let mut b = Builder {
            names: Vec::new(),
            tensors: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let patch_in = config.in_channels * p * p;
        let patch_w = b.uniform("embed.patch.weight".into(), &[patch_in, d], patch_in);
        let patch_b = b.constant("embed.patch.bias".into(), &[d], 0.0);
        let g = config.max_grid;
        let spatial = b.uniform("embed.spatial".into(), &[g * g, d], 4);
        let frame = b.uniform("embed.frame".into(), &[config.max_frames, d], 4);
        let backbone = (0..config.backbone_layers)
            .map(|l| b.block(&format!("backbone.{l}"), d, hidden))
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|l| b.block(&format!("decoder.{l}"), d, hidden))
            .collect();
        let final_g = b.constant("final_ln.gain".into(), &[d], 1.0);
        let final_b = b.constant("final_ln.bias".into(), &[d], 0.0);
        let fc = config.feature_channels;
        let unpatch_w = b.uniform("unpatch.weight".into(), &[d, fc * p * p], d);
        let unpatch_b = b.constant("unpatch.bias".into(), &[fc * p * p], 0.0);
        let ic = config.in_channels;
        let point = b.head("head.point", fc, ic, config.head_hidden);
        let normal = b.head("head.normal", fc, ic, config.head_hidden);

        let depths = config.chunked_layer_depths()?;
        let chunked = (0..config.backbone_layers).map(|l| depths.contains(&l)).collect();
        Ok(Model {
            layout: Layout {
                patch_w,
                patch_b,
                spatial,
                frame,
                backbone,
                decoder,
                final_g,
                final_b,
                unpatch_w,
                unpatch_b,
                point,
                normal,
            },
            names: b.names,
            params: b.tensors,
            config,
            chunked,
        })
    }

    /// Rebuilds a model from saved parameters, checking names and shapes.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Model::new(config)?;
        if named.len() != model.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                named.len(),
                model.params.len()
            )));
        }
        for (name, t) in named {
            let idx = model
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            if t.dims() != model.params[idx].dims() {
                return Err(Error::shape(format!(
                    "parameter {name}: {:?} vs expected {:?}",
                    t.dims(),
                    model.params[idx].dims()
                )));
            }
            model.params[idx] = t;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Backbone depths that use chunk attention.
    pub fn chunked_layers(&self) -> Vec<usize> {
        (0..self.chunked.len()).filter(|&l| self.chunked[l]).collect()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let idx = self.names.iter().position(|n| n == name)?;
        Some(&mut self.params[idx])
    }

    fn check_frames(&self, frames: &Tensor) -> Result<(usize, usize, usize)> {
        let [n, c, h, w] = dims4(frames)?;
        let p = self.config.patch_size;
        if c != self.config.in_channels {
            return Err(Error::shape(format!(
                "frames have {c} channels, model expects {}",
                self.config.in_channels
            )));
        }
        if n == 0 || h % p != 0 || w % p != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "{n} frames of {h}x{w} do not fit patch size {p}"
            )));
        }
        if h / p > self.config.max_grid || w / p > self.config.max_grid {
            return Err(Error::shape(format!(
                "{h}x{w} exceeds the {}x{} patch grid",
                self.config.max_grid, self.config.max_grid
            )));
        }
        Ok((n, h, w))
    }

    pub fn tokens_per_frame(&self, height: usize, width: usize) -> usize {
        let p = self.config.patch_size;
        (height / p) * (width / p)
    }

    pub fn new_cache(&self, height: usize, width: usize, window: Option<usize>) -> Result<ModelCache> {
        let layers = self.chunked_layers().len();
        Ok(ModelCache {
            kv: KvCache::new(
                layers,
                self.config.width,
                self.tokens_per_frame(height, width),
                window,
            )?,
            height,
            width,
        })
    }

    /// Builds the forward computation on `g`.
    pub(crate) fn run<'g>(
        &'g self,
        g: &mut Graph<'g>,
        frames: &Tensor,
        start_frame: usize,
        mut temporal: Temporal<'_>,
    ) -> Result<Trace> {
        let (n, h, w) = self.check_frames(frames)?;
        let cfg = &self.config;
        let p = cfg.patch_size;
        let tpf = self.tokens_per_frame(h, w);
        let grid_w = w / p;
        let pv: Vec<Var> = self.params.iter().map(|t| g.param(t)).collect();
        let lay = &self.layout;

        let patches = g.input(patchify(frames, p)?);
        let mut x = g.linear(patches, pv[lay.patch_w], pv[lay.patch_b])?;
        let spatial_idx = (0..n * tpf)
            .map(|r| {
                let k = r % tpf;
                (k / grid_w) * cfg.max_grid + k % grid_w
            })
            .collect();
        x = g.add_rows(x, pv[lay.spatial], spatial_idx)?;
        let frame_idx = (0..n * tpf)
            .map(|r| (start_frame + r / tpf).min(cfg.max_frames - 1))
            .collect();
        x = g.add_rows(x, pv[lay.frame], frame_idx)?;

        let mut temporal_layer = 0;
        for (l, bp) in lay.backbone.iter().enumerate() {
            if self.chunked[l] {
                x = match &mut temporal {
                    Temporal::Masked(mask) => {
                        self.block(g, &pv, bp, x, Attend::Mask(KeyMask::Dense(mask)))?
                    }
                    Temporal::Cached(cache) => self.block(
                        g,
                        &pv,
                        bp,
                        x,
                        Attend::Cache {
                            cache,
                            layer: temporal_layer,
                            start_frame,
                        },
                    )?,
                    Temporal::Skip => x,
                };
                temporal_layer += 1;
            } else {
                x = self.block(
                    g,
                    &pv,
                    bp,
                    x,
                    Attend::Mask(KeyMask::FrameLocal {
                        tokens_per_frame: tpf,
                    }),
                )?;
            }
        }
        for bp in &lay.decoder {
            x = self.block(
                g,
                &pv,
                bp,
                x,
                Attend::Mask(KeyMask::FrameLocal {
                    tokens_per_frame: tpf,
                }),
            )?;
        }
        x = g.layer_norm(x, pv[lay.final_g], pv[lay.final_b])?;
        let up = g.linear(x, pv[lay.unpatch_w], pv[lay.unpatch_b])?;
        let feat = g.unpatchify(up, n, h, w, p)?;

        let image = g.input(frames.clone());
        let points = self.head(g, &pv, &lay.point, feat, image)?;
        let points = g.exp_channel(points, 2)?;
        let normals = self.head(g, &pv, &lay.normal, feat, image)?;
        let normals = g.normalize_vec3(normals)?;
        Ok(Trace {
            points,
            normals,
            params: pv,
        })
    }

    fn block<'g>(
        &self,
        g: &mut Graph<'g>,
        pv: &[Var],
        bp: &BlockParams,
        x: Var,
        attend: Attend<'_, '_>,
    ) -> Result<Var> {
        let hn = g.layer_norm(x, pv[bp.ln1_g], pv[bp.ln1_b])?;
        let q = g.linear(hn, pv[bp.wq], pv[bp.bq])?;
        let k = g.linear(hn, pv[bp.wk], pv[bp.bk])?;
        let v = g.linear(hn, pv[bp.wv], pv[bp.bv])?;
        let a = match attend {
            Attend::Mask(mask) => g.attention(q, k, v, self.config.heads, mask)?,
            Attend::Cache {
                cache,
                layer,
                start_frame,
            } => {
                let out = cache.layer_mut(layer).attend(
                    start_frame,
                    g.value(q),
                    g.value(k),
                    g.value(v),
                    self.config.heads,
                )?;
                g.input(out)
            }
        };
        let o = g.linear(a, pv[bp.wo], pv[bp.bo])?;
        let x = g.add(x, o)?;
        let hn = g.layer_norm(x, pv[bp.ln2_g], pv[bp.ln2_b])?;
        let m = g.linear(hn, pv[bp.w1], pv[bp.b1])?;
        let m = g.gelu(m);
        let m = g.linear(m, pv[bp.w2], pv[bp.b2])?;
        g.add(x, m)
    }

    /// Two 3×3 convolutions; the first also reads the input frames through a
    /// skip branch so per-pixel detail lost to patching can reach the heads.
    fn head<'g>(&self, g: &mut Graph<'g>, pv: &[Var], hp: &HeadParams, feat: Var, image: Var) -> Result<Var> {
        let y = g.conv3x3(feat, pv[hp.w1], pv[hp.b1])?;
        let skip = g.conv3x3(image, pv[hp.skip_w], pv[hp.skip_b])?;
        let y = g.add(y, skip)?;
        let y = g.relu(y);
        g.conv3x3(y, pv[hp.w2], pv[hp.b2])
    }

    fn token_mask(&self, frames: &Tensor, partition: &ChunkPartition) -> Result<Mask> {
        let (n, h, w) = self.check_frames(frames)?;
        if partition.num_frames() != n {
            return Err(Error::shape(format!(
                "partition covers {} frames, input has {n}",
                partition.num_frames()
            )));
        }
        expand_mask(&build_mask(partition), self.tokens_per_frame(h, w))
    }

    /// Single-pass prediction for `frames` `[N×C×H×W]` under `partition`.
    pub fn forward(&self, frames: &Tensor, partition: &ChunkPartition) -> Result<GeometryOutput> {
        let mask = self.token_mask(frames, partition)?;
        let mut g = Graph::inference();
        let t = self.run(&mut g, frames, 0, Temporal::Masked(&mask))?;
        GeometryOutput::from_maps(g.value(t.points).clone(), g.value(t.normals).clone())
    }

    /// Prediction for the next packet of frames, reusing and extending the
    /// cached keys and values of earlier packets.
    pub fn forward_streaming(
        &self,
        packet: &Tensor,
        start_frame: usize,
        cache: &mut ModelCache,
    ) -> Result<GeometryOutput> {
        let (_, h, w) = self.check_frames(packet)?;
        if (h, w) != (cache.height, cache.width) {
            return Err(Error::shape(format!(
                "packet is {h}x{w}, cache was built for {}x{}",
                cache.height, cache.width
            )));
        }
        if start_frame != cache.next_frame() {
            return Err(Error::Sequence {
                expected: cache.next_frame(),
                got: start_frame,
            });
        }
        let mut g = Graph::inference();
        let t = self.run(&mut g, packet, start_frame, Temporal::Cached(&mut cache.kv))?;
        GeometryOutput::from_maps(g.value(t.points).clone(), g.value(t.normals).clone())
    }

    /// Runs a whole sequence in the given mode. Offline uses one masked
    /// pass; streaming and chunked feed packets through a cache, optionally
    /// bounded to `window` frames. Returns the output and the peak number of
    /// frames whose keys were held at once.
    pub fn infer(
        &self,
        frames: &Tensor,
        mode: InferenceMode,
        window: Option<usize>,
    ) -> Result<(GeometryOutput, usize)> {
        let (n, h, w) = self.check_frames(frames)?;
        if mode == InferenceMode::Offline {
            return Ok((self.forward(frames, &ChunkPartition::full(n)?)?, n));
        }
        let partition = mode.partition(n)?;
        let mut cache = self.new_cache(h, w, window)?;
        let mut parts = Vec::with_capacity(partition.num_chunks());
        for r in partition.ranges() {
            let packet = frames.slice_rows(r.start, r.end);
            parts.push(self.forward_streaming(&packet, r.start, &mut cache)?);
        }
        Ok((GeometryOutput::concat(&parts)?, cache.peak_frames()))
    }

    /// Recording forward pass for training.
    pub fn forward_train<'g>(
        &'g self,
        g: &mut Graph<'g>,
        frames: &Tensor,
        partition: &ChunkPartition,
    ) -> Result<Trace> {
        let mask = self.token_mask(frames, partition)?;
        self.run(g, frames, 0, Temporal::Masked(&mask))
    }

    /// Parameter gradients of a recorded pass, in parameter order.
    pub fn collect_grads(&self, trace: &Trace, grads: &Grads) -> Vec<Tensor> {
        trace
            .params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.dims().to_vec()))
            })
            .collect()
    }
}

enum Attend<'m, 'c> {
    Mask(KeyMask<'m>),
    Cache {
        cache: &'c mut KvCache,
        layer: usize,
        start_frame: usize,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            patch_size: 4,
            width: 16,
            heads: 2,
            backbone_layers: 3,
            chunk_attn_ratio: 1.0 / 3.0,
            decoder_layers: 1,
            feature_channels: 4,
            head_hidden: 4,
            ..Default::default()
        }
    }

    fn frames(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([n, 3, h, w], |_| rng.gen_range(0.0f32..1.0))
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(ModelConfig::default()).unwrap();
        let b = Model::new(ModelConfig::default()).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.chunked_layers(), vec![2, 5]);
    }

    #[test]
    fn output_shapes_and_invariants() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let x = frames(2, 16, 16, 1);
        let out = m.forward(&x, &ChunkPartition::full(2).unwrap()).unwrap();
        assert_eq!(out.points.dims(), &[2, 3, 16, 16]);
        assert_eq!(out.depth.dims(), &[2, 16, 16]);
        assert_eq!(out.normals.dims(), &[2, 3, 16, 16]);
        assert_eq!(out.depth, z_channel(&out.points).unwrap());
        assert!(out.depth.data().iter().all(|&d| d > 0.0));
        let nd = out.normals.data();
        for f in 0..2 {
            for p in 0..256 {
                let v: Vec<f32> = (0..3).map(|c| nd[(f * 3 + c) * 256 + p]).collect();
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                assert!((norm - 1.0).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn streaming_matches_causal_forward_exactly() {
        let m = Model::new(tiny()).unwrap();
        let x = frames(4, 8, 8, 2);
        let (s, peak) = m.infer(&x, InferenceMode::Streaming, None).unwrap();
        let f = m.forward(&x, &ChunkPartition::streaming(4).unwrap()).unwrap();
        assert_eq!(s, f);
        assert_eq!(peak, 4);
    }

    #[test]
    fn single_packet_matches_offline() {
        let m = Model::new(tiny()).unwrap();
        let x = frames(3, 8, 8, 3);
        let (c, _) = m.infer(&x, InferenceMode::Chunked(3), None).unwrap();
        let (o, _) = m.infer(&x, InferenceMode::Offline, None).unwrap();
        assert_eq!(c, o);
    }

    #[test]
    fn out_of_order_packet_rejected() {
        let m = Model::new(tiny()).unwrap();
        let x = frames(2, 8, 8, 4);
        let mut cache = m.new_cache(8, 8, None).unwrap();
        let err = m.forward_streaming(&x.slice_rows(1, 2), 1, &mut cache).unwrap_err();
        assert!(matches!(err, Error::Sequence { expected: 0, got: 1 }));
    }

    #[test]
    fn frame_local_network_is_permutation_equivariant() {
        let mut m = Model::new(tiny()).unwrap();
        // the frame-index embedding is the only other source of frame identity
        for v in m.param_mut("embed.frame").unwrap().data_mut() {
            *v = 0.0;
        }
        let x = frames(3, 8, 8, 5);
        let perm = [2usize, 0, 1];
        let xp = Tensor::concat_rows(
            &perm
                .iter()
                .map(|&i| x.slice_rows(i, i + 1))
                .collect::<Vec<_>>()
                .iter()
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let run = |x: &Tensor| {
            let mut g = Graph::inference();
            let t = m.run(&mut g, x, 0, Temporal::Skip).unwrap();
            g.value(t.points).clone()
        };
        let a = run(&x);
        let b = run(&xp);
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(b.slice_rows(k, k + 1), a.slice_rows(i, i + 1));
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let m = Model::new(tiny()).unwrap();
        assert!(m.forward(&frames(2, 6, 8, 6), &ChunkPartition::full(2).unwrap()).is_err());
        assert!(m.forward(&frames(2, 8, 8, 6), &ChunkPartition::full(3).unwrap()).is_err());
    }
}
