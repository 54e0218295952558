//! Generator and discriminator built from spatio-temporal graph
//! convolutions over a 1 -> 3 -> 11 -> 25 vertex pyramid.
//!
//! The 11-vertex level groups the 25 joints into anatomical regions:
//!
//! ```text
//!  0 head      {nose, eyes, ears}    6 hips        {mid-hip, hips}
//!  1 torso     {neck}                7 R thigh     {R knee}
//!  2 R upper   {R shoulder, elbow}   8 R shin+foot {R ankle, R foot}
//!  3 R forearm {R wrist}             9 L thigh     {L knee}
//!  4 L upper   {L shoulder, elbow}  10 L shin+foot {L ankle, L foot}
//!  5 L forearm {L wrist}
//! ```
//!
//! and the 3-vertex level into {head+torso+hips, right limbs, left limbs}.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::StyleLabel;
use crate::latent::{self, StyleEmbedding, FRAMES_PER_STEP};
use crate::nn::{dropout, BatchNorm, Ctx, Linear, Module, Parameter, TemporalConv, TemporalUpsample};
use crate::skeleton::{BODY25_EDGES, JOINTS};
use crate::tensor::{Tensor, TensorError};

/// Geodesic-distance classes in an aggregation matrix.
pub const K: usize = 2;
pub const LEVELS: [usize; 4] = [1, 3, 11, 25];

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("expected {expected} vertices, got {got}")]
    Vertices { expected: usize, got: usize },
    #[error("frame count {0} is not a positive multiple of 16")]
    Frames(usize),
    #[error("discriminator is not a mirror of the generator: {0}")]
    Mirror(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, GraphError>;

/// Undirected graph on one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLevel {
    pub vertex_count: usize,
    pub edges: Vec<(usize, usize)>,
}

const EDGES_3: [(usize, usize); 2] = [(0, 1), (0, 2)];
const EDGES_11: [(usize, usize); 10] =
    [(0, 1), (1, 2), (2, 3), (1, 4), (4, 5), (1, 6), (6, 7), (7, 8), (6, 9), (9, 10)];

impl GraphLevel {
    pub fn new(vertex_count: usize) -> Result<GraphLevel> {
        let edges = match vertex_count {
            1 => vec![],
            3 => EDGES_3.to_vec(),
            11 => EDGES_11.to_vec(),
            25 => BODY25_EDGES.to_vec(),
            n => return Err(GraphError::Config(format!("no pyramid level with {n} vertices"))),
        };
        Ok(GraphLevel { vertex_count, edges })
    }

    /// Binary adjacency with self loops, row-major `V x V`.
    pub fn adjacency(&self) -> Vec<f64> {
        let v = self.vertex_count;
        let mut a = vec![0.0; v * v];
        for i in 0..v {
            a[i * v + i] = 1.0;
        }
        for &(i, j) in &self.edges {
            a[i * v + j] = 1.0;
            a[j * v + i] = 1.0;
        }
        a
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| if a == i { Some(b) } else if b == i { Some(a) } else { None })
            .collect();
        n.sort_unstable();
        n
    }

    /// Hop distances from `src`.
    pub fn geodesic(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.vertex_count];
        dist[src] = Some(0);
        let mut frontier = vec![src];
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for w in self.neighbors(u) {
                    if dist[w].is_none() {
                        dist[w] = Some(d);
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.geodesic(0).iter().all(Option::is_some)
    }
}

/// How each vertex of a coarse level maps onto the next finer level.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidMap {
    pub coarse: GraphLevel,
    pub fine: GraphLevel,
    /// Fine vertices collapsed into each coarse vertex.
    pub members: Vec<Vec<usize>>,
    /// Fine vertex standing in for each coarse vertex.
    pub representative: Vec<usize>,
}

impl PyramidMap {
    pub fn between(coarse: usize, fine: usize) -> Result<PyramidMap> {
        let (members, representative): (Vec<Vec<usize>>, Vec<usize>) = match (coarse, fine) {
            (1, 3) => (vec![vec![0, 1, 2]], vec![0]),
            (3, 11) => (vec![vec![0, 1, 6], vec![2, 3, 7, 8], vec![4, 5, 9, 10]], vec![1, 2, 4]),
            (11, 25) => (
                vec![
                    vec![0, 15, 16, 17, 18],
                    vec![1],
                    vec![2, 3],
                    vec![4],
                    vec![5, 6],
                    vec![7],
                    vec![8, 9, 12],
                    vec![10],
                    vec![11, 22, 23, 24],
                    vec![13],
                    vec![14, 19, 20, 21],
                ],
                vec![0, 1, 2, 4, 5, 7, 8, 10, 11, 13, 14],
            ),
            (c, f) => return Err(GraphError::Config(format!("no pyramid step {c} -> {f}"))),
        };
        Ok(PyramidMap { coarse: GraphLevel::new(coarse)?, fine: GraphLevel::new(fine)?, members, representative })
    }

    /// `mask[k][coarse][fine]`: distance class 0 links a coarse vertex to
    /// its representative; class 1 adds its members and the
    /// representative's neighbors.
    pub fn mask(&self) -> Vec<Vec<Vec<bool>>> {
        let (vc, vf) = (self.coarse.vertex_count, self.fine.vertex_count);
        let mut m = vec![vec![vec![false; vf]; vc]; K];
        for j in 0..vc {
            let rep = self.representative[j];
            m[0][j][rep] = true;
            m[1][j][rep] = true;
            for &i in self.members[j].iter().chain(&self.fine.neighbors(rep)) {
                m[1][j][i] = true;
            }
        }
        m
    }
}

/// Masked `(K, V_out, V_in)` vertex aggregation.
#[derive(Debug, Clone)]
pub struct Aggregation {
    pub weights: Parameter,
    mask: Tensor,
}

impl Aggregation {
    /// Builds from an explicit `(K, V_out, V_in)` mask; allowed entries
    /// are drawn so each output row sums to one in expectation.
    pub fn with_mask(name: &str, mask: &[Vec<Vec<bool>>], rng: &mut impl Rng) -> Result<Aggregation> {
        let k = mask.len();
        let vo = mask.first().map_or(0, Vec::len);
        let vi = mask.first().and_then(|m| m.first()).map_or(0, Vec::len);
        let mut w = vec![0.0; k * vo * vi];
        let mut bits = vec![0.0; k * vo * vi];
        for i in 0..vo {
            let allowed = (0..k).map(|kk| mask[kk][i].iter().filter(|&&b| b).count()).sum::<usize>().max(1);
            for kk in 0..k {
                for j in 0..vi {
                    if mask[kk][i][j] {
                        let idx = (kk * vo + i) * vi + j;
                        bits[idx] = 1.0;
                        w[idx] = rng.random_range(0.0..2.0 / allowed as f64);
                    }
                }
            }
        }
        Ok(Aggregation {
            weights: Parameter::new(format!("{name}.weight"), w, &[k, vo, vi])?,
            mask: Tensor::new(bits, &[k, vo, vi])?,
        })
    }

    /// Coarse-to-fine aggregation for `map`.
    pub fn upsample(name: &str, map: &PyramidMap, rng: &mut impl Rng) -> Result<Aggregation> {
        let m = map.mask();
        let (vc, vf) = (map.coarse.vertex_count, map.fine.vertex_count);
        let t: Vec<Vec<Vec<bool>>> =
            (0..K).map(|k| (0..vf).map(|i| (0..vc).map(|j| m[k][j][i]).collect()).collect()).collect();
        Self::with_mask(name, &t, rng)
    }

    /// Fine-to-coarse aggregation for `map`.
    pub fn downsample(name: &str, map: &PyramidMap, rng: &mut impl Rng) -> Result<Aggregation> {
        Self::with_mask(name, &map.mask(), rng)
    }

    pub fn v_in(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn v_out(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn mask(&self) -> &[f64] {
        self.mask.data()
    }

    /// `f'_i = sum_{k,j} A[k,i,j] f_j` at every channel and time step.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let v = *x.shape().last().unwrap_or(&0);
        if v != self.v_in() {
            return Err(GraphError::Vertices { expected: self.v_in(), got: v });
        }
        let m = self.weights.tensor().mul(&self.mask)?.sum_axes(&[0])?;
        Ok(x.vertex_mix(&m)?)
    }
}

impl Module for Aggregation {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weights)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weights)
    }
}

/// `D^{-1/2} A D^{-1/2}` for a binary adjacency; zero-degree rows stay 0.
pub fn normalize_adjacency(a: &[f64], v: usize) -> Vec<f64> {
    let deg: Vec<f64> = (0..v).map(|i| a[i * v..(i + 1) * v].iter().sum()).collect();
    let inv: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { d.powf(-0.5) } else { 0.0 }).collect();
    let mut out = vec![0.0; v * v];
    for i in 0..v {
        for j in 0..v {
            out[i * v + j] = inv[i] * a[i * v + j] * inv[j];
        }
    }
    out
}

/// Normalized partition matrices: self links, then neighbor links.
pub fn partitions(level: &GraphLevel) -> Vec<Vec<f64>> {
    let v = level.vertex_count;
    let mut own = vec![0.0; v * v];
    let mut nbr = vec![0.0; v * v];
    for i in 0..v {
        own[i * v + i] = 1.0;
    }
    for &(i, j) in &level.edges {
        nbr[i * v + j] = 1.0;
        nbr[j * v + i] = 1.0;
    }
    vec![normalize_adjacency(&own, v), normalize_adjacency(&nbr, v)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StConvOptions {
    pub temporal_kernel: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Default for StConvOptions {
    fn default() -> Self {
        StConvOptions { temporal_kernel: 9, dropout: 0.3, leaky_slope: 0.2 }
    }
}

/// Spatial partition convolution, temporal convolution, batch norm,
/// leaky ReLU and dropout. Preserves `(T, V)`.
#[derive(Debug, Clone)]
pub struct StGraphConv {
    pub vertices: usize,
    pub spatial: TemporalConv,
    pub temporal: TemporalConv,
    pub norm: BatchNorm,
    pub opts: StConvOptions,
    parts: Vec<Tensor>,
}

impl StGraphConv {
    pub fn new(name: &str, level: &GraphLevel, c_in: usize, c_out: usize, opts: StConvOptions, rng: &mut impl Rng) -> Result<StGraphConv> {
        if opts.temporal_kernel % 2 == 0 {
            return Err(GraphError::Config("temporal kernel must be odd".into()));
        }
        let v = level.vertex_count;
        let parts = partitions(level)
            .into_iter()
            .map(|p| Tensor::new(p, &[v, v]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let k = opts.temporal_kernel;
        Ok(StGraphConv {
            vertices: v,
            spatial: TemporalConv::new(&format!("{name}.spatial"), c_in * parts.len(), c_out, 1, 1, 0, rng),
            temporal: TemporalConv::new(&format!("{name}.temporal"), c_out, c_out, k, 1, k / 2, rng),
            norm: BatchNorm::new(&format!("{name}.bn"), c_out),
            opts,
            parts,
        })
    }

    pub fn c_in(&self) -> usize {
        self.spatial.c_in() / self.parts.len()
    }

    pub fn c_out(&self) -> usize {
        self.spatial.c_out()
    }

    /// Graph propagation `sum_k A_k f W_k` alone.
    pub fn spatial_forward(&self, x: &Tensor) -> Result<Tensor> {
        let v = *x.shape().last().unwrap_or(&0);
        if v != self.vertices {
            return Err(GraphError::Vertices { expected: self.vertices, got: v });
        }
        let mixed = self.parts.iter().map(|p| x.vertex_mix(p)).collect::<std::result::Result<Vec<_>, _>>()?;
        let axis = x.ndim() - 3;
        Ok(self.spatial.forward(&Tensor::concat(&mixed, axis)?)?)
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let h = self.temporal.forward(&self.spatial_forward(x)?)?;
        let h = self.norm.forward(&h, ctx)?.leaky_relu(self.opts.leaky_slope);
        Ok(dropout(&h, self.opts.dropout, ctx)?)
    }
}

impl Module for StGraphConv {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.spatial.visit(f);
        self.temporal.visit(f);
        self.norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.spatial.visit_mut(f);
        self.temporal.visit_mut(f);
        self.norm.visit_mut(f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassEncoding {
    /// One channel holding `class / (classes - 1)`.
    Scalar,
    OneHot,
}

impl ClassEncoding {
    pub fn channels(self) -> usize {
        match self {
            ClassEncoding::Scalar => 1,
            ClassEncoding::OneHot => StyleLabel::COUNT,
        }
    }

    pub fn values(self, style: StyleLabel) -> Vec<f64> {
        match self {
            ClassEncoding::Scalar => vec![style.index() as f64 / (StyleLabel::COUNT - 1) as f64],
            ClassEncoding::OneHot => (0..StyleLabel::COUNT).map(|i| f64::from(u8::from(i == style.index()))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphNetConfig {
    /// Channels of the latent input (noise plus style embedding).
    pub latent_channels: usize,
    /// Output channels of the four generator st-conv blocks.
    pub channels: [usize; 4],
    pub st: StConvOptions,
    pub class_encoding: ClassEncoding,
}

impl Default for GraphNetConfig {
    fn default() -> Self {
        GraphNetConfig {
            latent_channels: 1024,
            channels: [512, 256, 128, 128],
            st: StConvOptions::default(),
            class_encoding: ClassEncoding::Scalar,
        }
    }
}

impl GraphNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels < 2 || self.latent_channels % 2 != 0 {
            return Err(GraphError::Config(format!(
                "latent_channels must be even and at least 2, got {}",
                self.latent_channels
            )));
        }
        if self.channels.contains(&0) {
            return Err(GraphError::Config("block channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.st.dropout) {
            return Err(GraphError::Config(format!("dropout must lie in [0, 1), got {}", self.st.dropout)));
        }
        Ok(())
    }

    /// Noise channels `C`; the latent holds `2C`.
    pub fn noise_channels(&self) -> usize {
        self.latent_channels / 2
    }
}

/// One generator stage: temporal doubling, optional vertex upsampling,
/// st-conv.
#[derive(Debug, Clone)]
pub struct GenBlock {
    pub upsample_t: TemporalUpsample,
    pub upsample_v: Option<Aggregation>,
    pub conv: StGraphConv,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: GraphNetConfig,
    pub embedding: StyleEmbedding,
    pub blocks: Vec<GenBlock>,
    pub out: TemporalConv,
}

impl Generator {
    pub fn new(cfg: &GraphNetConfig, seed: u64) -> Result<Generator> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = StyleEmbedding::new(cfg.noise_channels(), &mut rng);
        let mut blocks = Vec::new();
        let mut c_in = cfg.latent_channels;
        let vertex_path = [(1, Some(3)), (3, Some(11)), (11, Some(25)), (25, None)];
        for (b, (&(v_in, v_out), &c_out)) in vertex_path.iter().zip(&cfg.channels).enumerate() {
            let name = format!("g.block{b}");
            let upsample_v = match v_out {
                Some(vo) => Some(Aggregation::upsample(&format!("{name}.up_v"), &PyramidMap::between(v_in, vo)?, &mut rng)?),
                None => None,
            };
            let level = GraphLevel::new(v_out.unwrap_or(v_in))?;
            blocks.push(GenBlock {
                upsample_t: TemporalUpsample::new(&format!("{name}.up_t"), c_in, c_in, &mut rng),
                upsample_v,
                conv: StGraphConv::new(&format!("{name}.st"), &level, c_in, c_out, cfg.st, &mut rng)?,
            });
            c_in = c_out;
        }
        let out = TemporalConv::new("g.out", c_in, 2, 1, 1, 0, &mut rng);
        Ok(Generator { cfg: cfg.clone(), embedding, blocks, out })
    }

    /// `(N, 2C, T, 1)` latent batch to `(N, 2, 16T, 25)` normalized poses; a
    /// `(2C, T, 1)` latent gives `(2, 16T, 25)`.
    pub fn forward(&self, z: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let unbatched = z.ndim() == 3;
        let z = if unbatched { z.reshape(&[&[1], z.shape()].concat())? } else { z.clone() };
        let &[_, c, t, v] = z.shape() else {
            return Err(GraphError::Config(format!("latent must be (N, 2C, T, 1), got {:?}", z.shape())));
        };
        if c != self.cfg.latent_channels || v != 1 || t == 0 {
            return Err(GraphError::Config(format!(
                "latent must be (N, {}, T>=1, 1), got {:?}",
                self.cfg.latent_channels,
                z.shape()
            )));
        }
        let mut h = z;
        for b in &self.blocks {
            h = b.upsample_t.forward(&h)?;
            if let Some(up) = &b.upsample_v {
                h = up.forward(&h)?;
            }
            h = b.conv.forward(&h, ctx)?;
        }
        let out = self.out.forward(&h)?;
        if unbatched {
            return Ok(out.reshape(&out.shape()[1..])?);
        }
        Ok(out)
    }

    /// Samples GP noise for `styles.len()` steps per item, appends the style
    /// embedding, and runs the network.
    pub fn generate(&self, styles: &[Vec<StyleLabel>], sigma: f64, rng: &mut ChaCha8Rng, ctx: &mut Ctx) -> Result<Tensor> {
        let z = self.sample_latents(styles, sigma, rng)?;
        self.forward(&z, ctx)
    }

    pub fn sample_latents(&self, styles: &[Vec<StyleLabel>], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let steps = styles.first().map_or(0, Vec::len);
        if steps == 0 || styles.iter().any(|s| s.len() != steps) {
            return Err(GraphError::Config("every item needs the same positive number of steps".into()));
        }
        let gp = latent::GpConfig { channels: self.cfg.noise_channels(), steps, vertices: 1, sigma };
        let kernels = latent::channel_kernels(&gp).map_err(|e| GraphError::Config(e.to_string()))?;
        let latents = styles
            .iter()
            .map(|s| {
                let noise = latent::sample_with(&kernels, steps, rng)?;
                latent::assemble_latent(&noise, s, &self.embedding).map_err(|e| GraphError::Config(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(latent::stack_latents(&latents)?)
    }

    /// `(c_in, c_out, vertices)` of each st-conv, input to output.
    pub fn conv_signature(&self) -> Vec<(usize, usize, usize)> {
        self.blocks.iter().map(|b| (b.conv.c_in(), b.conv.c_out(), b.conv.vertices)).collect()
    }
}

impl Module for Generator {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.embedding.visit(f);
        for b in &self.blocks {
            b.upsample_t.visit(f);
            if let Some(u) = &b.upsample_v {
                u.visit(f);
            }
            b.conv.visit(f);
        }
        self.out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.embedding.visit_mut(f);
        for b in &mut self.blocks {
            b.upsample_t.visit_mut(f);
            if let Some(u) = &mut b.upsample_v {
                u.visit_mut(f);
            }
            b.conv.visit_mut(f);
        }
        self.out.visit_mut(f);
    }
}

/// One discriminator stage: st-conv, optional vertex downsampling, strided
/// temporal convolution halving T.
#[derive(Debug, Clone)]
pub struct DiscBlock {
    pub conv: StGraphConv,
    pub downsample_v: Option<Aggregation>,
    pub downsample_t: TemporalConv,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: GraphNetConfig,
    pub input: TemporalConv,
    pub blocks: Vec<DiscBlock>,
    pub head: Linear,
}

impl Discriminator {
    pub fn new(cfg: &GraphNetConfig, seed: u64) -> Result<Discriminator> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &cfg.channels;
        let c_in = 2 + cfg.class_encoding.channels();
        let input = TemporalConv::new("d.in", c_in, c[3], 1, 1, 0, &mut rng);
        // (st-conv in, out, vertices) and vertex downsampling target
        let plan = [
            (c[3], c[2], 25, None),
            (c[2], c[1], 25, Some(11)),
            (c[1], c[0], 11, Some(3)),
            (c[0], cfg.latent_channels, 3, Some(1)),
        ];
        let mut blocks = Vec::new();
        for (b, &(ci, co, v, down)) in plan.iter().enumerate() {
            let name = format!("d.block{b}");
            let downsample_v = match down {
                Some(vo) => Some(Aggregation::downsample(&format!("{name}.down_v"), &PyramidMap::between(vo, v)?, &mut rng)?),
                None => None,
            };
            blocks.push(DiscBlock {
                conv: StGraphConv::new(&format!("{name}.st"), &GraphLevel::new(v)?, ci, co, cfg.st, &mut rng)?,
                downsample_v,
                downsample_t: TemporalConv::new(&format!("{name}.down_t"), co, co, 4, 2, 1, &mut rng),
            });
        }
        let head = Linear::new("d.head", cfg.latent_channels, 1, &mut rng);
        Ok(Discriminator { cfg: cfg.clone(), input, blocks, head })
    }

    /// Appends the class channel(s) to `(N, 2, F, 25)` poses.
    pub fn condition(&self, poses: &Tensor, styles: &[StyleLabel]) -> Result<Tensor> {
        let &[n, 2, f, v] = poses.shape() else {
            return Err(GraphError::Config(format!("poses must be (N, 2, F, 25), got {:?}", poses.shape())));
        };
        if styles.len() != n {
            return Err(GraphError::Config(format!("{} styles for a batch of {n}", styles.len())));
        }
        let enc = self.cfg.class_encoding;
        let cc = enc.channels();
        let mut data = Vec::with_capacity(n * cc * f * v);
        for s in styles {
            for val in enc.values(*s) {
                data.extend(std::iter::repeat_n(val, f * v));
            }
        }
        let class = Tensor::new(data, &[n, cc, f, v])?;
        Ok(Tensor::concat(&[poses.clone(), class], 1)?)
    }

    /// Pre-sigmoid scores `(N, 1)` for conditioned input `(N, 2 + classes, F, 25)`.
    /// A 3-D input is one sample and scores `(1, 1)`.
    pub fn logits(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let x = if x.ndim() == 3 { &x.reshape(&[&[1], x.shape()].concat())? } else { x };
        let &[_, c, f, v] = x.shape() else {
            return Err(GraphError::Config(format!("input must be 4-D, got {:?}", x.shape())));
        };
        if v != JOINTS {
            return Err(GraphError::Vertices { expected: JOINTS, got: v });
        }
        if f == 0 || f % FRAMES_PER_STEP != 0 {
            return Err(GraphError::Frames(f));
        }
        if c != self.input.c_in() {
            return Err(GraphError::Config(format!("expected {} input channels, got {c}", self.input.c_in())));
        }
        let mut h = self.input.forward(x)?;
        for b in &self.blocks {
            h = b.conv.forward(&h, ctx)?;
            if let Some(d) = &b.downsample_v {
                h = d.forward(&h)?;
            }
            h = b.downsample_t.forward(&h)?;
        }
        let pooled = h.mean_axes(&[2, 3])?;
        Ok(self.head.forward(&pooled)?)
    }

    /// Real/fake probability `(N, 1)`.
    pub fn forward(&self, poses: &Tensor, styles: &[StyleLabel], ctx: &mut Ctx) -> Result<Tensor> {
        Ok(self.logits(&self.condition(poses, styles)?, ctx)?.sigmoid())
    }

    pub fn conv_signature(&self) -> Vec<(usize, usize, usize)> {
        self.blocks.iter().map(|b| (b.conv.c_in(), b.conv.c_out(), b.conv.vertices)).collect()
    }
}

impl Module for Discriminator {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.input.visit(f);
        for b in &self.blocks {
            b.conv.visit(f);
            if let Some(d) = &b.downsample_v {
                d.visit(f);
            }
            b.downsample_t.visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.input.visit_mut(f);
        for b in &mut self.blocks {
            b.conv.visit_mut(f);
            if let Some(d) = &mut b.downsample_v {
                d.visit_mut(f);
            }
            b.downsample_t.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

/// Checks that every discriminator st-conv reverses the matching generator
/// st-conv in channels and vertex count, and that the vertex pyramids
/// mirror each other.
pub fn check_mirror(g: &Generator, d: &Discriminator) -> Result<()> {
    let gs = g.conv_signature();
    let ds = d.conv_signature();
    if gs.len() != ds.len() {
        return Err(GraphError::Mirror(format!("{} vs {} st-conv blocks", gs.len(), ds.len())));
    }
    for (i, (gb, db)) in gs.iter().zip(ds.iter().rev()).enumerate() {
        if (gb.1, gb.0, gb.2) != *db {
            return Err(GraphError::Mirror(format!("block {i}: generator {gb:?} vs discriminator {db:?}")));
        }
    }
    let up: Vec<(usize, usize)> =
        g.blocks.iter().filter_map(|b| b.upsample_v.as_ref().map(|a| (a.v_in(), a.v_out()))).collect();
    let down: Vec<(usize, usize)> =
        d.blocks.iter().rev().filter_map(|b| b.downsample_v.as_ref().map(|a| (a.v_out(), a.v_in()))).collect();
    if up != down {
        return Err(GraphError::Mirror(format!("vertex pyramid {up:?} vs {down:?}")));
    }
    Ok(())
}

/// Builds a generator/discriminator pair and asserts the mirror structure.
pub fn build_pair(cfg: &GraphNetConfig, seed: u64) -> Result<(Generator, Discriminator)> {
    let g = Generator::new(cfg, seed)?;
    let d = Discriminator::new(cfg, seed.wrapping_add(0x9e37_79b9))?;
    check_mirror(&g, &d)?;
    Ok((g, d))
}
