//! Builders and forward passes for the unrolled reconstruction networks.
//!
//! Three algorithm families (pdhg, admm, ista), each in three learning
//! states: state I learns the regularizer (and algorithm scalars), state
//! II additionally learns the data-fidelity update, state III additionally
//! learns the variable combinations. The `pdhg I*` control keeps the
//! state-I structure but deepens the primal block until its parameter
//! count matches state II exactly.
//!
//! Every stage owns its own scalars and convolution weights. A forward
//! pass records onto a [`Tape`], so the same code path serves evaluation
//! and training.

pub mod init;

use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::autodiff::{softplus_inverse, NodeId, ParamId, ParameterStore, Tape};
use crate::error::{Error, Result};
use crate::operators::LinearOperator;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Pdhg,
    Admm,
    Ista,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdhg" => Ok(Family::Pdhg),
            "admm" => Ok(Family::Admm),
            "ista" => Ok(Family::Ista),
            other => Err(Error::Argument(format!("unknown family {other:?}"))),
        }
    }

    /// Iteration counts used throughout: 10 for pdhg and ista, 15 for admm.
    pub fn default_stages(&self) -> usize {
        match self {
            Family::Admm => 15,
            _ => 10,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Pdhg => "pdhg",
            Family::Admm => "admm",
            Family::Ista => "ista",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearningState {
    I,
    II,
    III,
    /// State-I structure, parameter count matched to state II (pdhg only).
    IStar,
}

impl LearningState {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('*', "_STAR").as_str() {
            "I" | "1" => Ok(LearningState::I),
            "II" | "2" => Ok(LearningState::II),
            "III" | "3" => Ok(LearningState::III),
            "I_STAR" | "ISTAR" | "1_STAR" => Ok(LearningState::IStar),
            other => Err(Error::Argument(format!("unknown learning state {other:?}"))),
        }
    }
}

impl fmt::Display for LearningState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LearningState::I => "I",
            LearningState::II => "II",
            LearningState::III => "III",
            LearningState::IStar => "I_star",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    Sigma,
    Tau,
    ThetaPdhg,
    /// Stored as a raw value; the effective penalty is softplus(raw),
    /// which keeps the admm normal-equation solve positive definite.
    Rho,
    Mu1,
    Mu2,
    LambdaTilde(usize),
    EtaTilde,
    Gamma1,
    Gamma2,
    RhoStep,
    /// Stored as a raw value; the effective threshold is softplus(raw).
    ThetaShrink,
}

impl ScalarKind {
    /// Scalars stored through the softplus reparameterization.
    pub fn is_softplus_reparam(&self) -> bool {
        matches!(self, ScalarKind::Rho | ScalarKind::ThetaShrink)
    }
}

impl ScalarKind {
    fn name(&self) -> String {
        match self {
            ScalarKind::Sigma => "sigma".into(),
            ScalarKind::Tau => "tau".into(),
            ScalarKind::ThetaPdhg => "theta_pdhg".into(),
            ScalarKind::Rho => "rho".into(),
            ScalarKind::Mu1 => "mu1".into(),
            ScalarKind::Mu2 => "mu2".into(),
            ScalarKind::LambdaTilde(l) => format!("lambda_tilde{l}"),
            ScalarKind::EtaTilde => "eta_tilde".into(),
            ScalarKind::Gamma1 => "gamma1".into(),
            ScalarKind::Gamma2 => "gamma2".into(),
            ScalarKind::RhoStep => "rho_step".into(),
            ScalarKind::ThetaShrink => "theta_shrink".into(),
        }
    }

    fn default_value(&self) -> f64 {
        match self {
            ScalarKind::Sigma | ScalarKind::Tau => 0.5,
            ScalarKind::ThetaPdhg => 1.0,
            ScalarKind::Rho => softplus_inverse(1.0),
            ScalarKind::Mu2 | ScalarKind::EtaTilde | ScalarKind::Gamma2 => 1.0,
            ScalarKind::Mu1 | ScalarKind::Gamma1 => 0.0,
            ScalarKind::RhoStep => 1.0,
            ScalarKind::ThetaShrink => softplus_inverse(0.01),
            ScalarKind::LambdaTilde(_) => 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Lambda,
    Gamma,
    Pi,
    G,
    GTilde,
    Psi(usize),
}

impl BlockKind {
    fn name(&self) -> String {
        match self {
            BlockKind::Lambda => "lambda".into(),
            BlockKind::Gamma => "gamma".into(),
            BlockKind::Pi => "pi".into(),
            BlockKind::G => "g".into(),
            BlockKind::GTilde => "g_tilde".into(),
            BlockKind::Psi(l) => format!("psi{l}"),
        }
    }
}

/// Channel widths and activation pattern of one convolution block. All
/// kernels are 3x3; a ReLU follows every layer except the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvBlockSpec {
    pub widths: Vec<usize>,
    /// Add the block input to its output (requires equal in/out widths).
    pub residual: bool,
}

impl ConvBlockSpec {
    fn new(widths: &[usize], residual: bool) -> Self {
        if residual {
            assert_eq!(
                widths.first(),
                widths.last(),
                "residual blocks need equal in/out channels"
            );
        }
        ConvBlockSpec {
            widths: widths.to_vec(),
            residual,
        }
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|p| 9 * p[0] * p[1] + p[1])
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlockParams {
    pub kind: BlockKind,
    pub spec: ConvBlockSpec,
    /// (kernel, bias) parameter ids per layer.
    pub layers: Vec<(ParamId, ParamId)>,
}

/// One unrolled iteration with its own parameter set.
#[derive(Debug, Clone)]
pub struct Stage {
    pub scalars: Vec<(ScalarKind, ParamId)>,
    pub blocks: Vec<ConvBlockParams>,
}

impl Stage {
    pub fn scalar(&self, kind: ScalarKind) -> Option<ParamId> {
        self.scalars.iter().find(|(k, _)| *k == kind).map(|(_, id)| *id)
    }

    pub fn block(&self, kind: BlockKind) -> Option<&ConvBlockParams> {
        self.blocks.iter().find(|b| b.kind == kind)
    }

    pub fn conv_param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.spec.param_count()).sum()
    }

    pub fn scalar_count(&self) -> usize {
        self.scalars.len()
    }
}

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub family: Family,
    pub state: LearningState,
    pub n_stages: usize,
    /// Image channels: 2 for complex MRI, 1 for CT.
    pub channels: usize,
    /// Transform branches in the admm z-update.
    pub l_transforms: usize,
    pub init_seed: u64,
}

impl NetworkConfig {
    pub fn new(family: Family, state: LearningState) -> Self {
        NetworkConfig {
            family,
            state,
            n_stages: family.default_stages(),
            channels: 2,
            l_transforms: 1,
            init_seed: 0,
        }
    }

    pub fn with_stages(mut self, n: usize) -> Self {
        self.n_stages = n;
        self
    }

    pub fn with_channels(mut self, c: usize) -> Self {
        self.channels = c;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_l_transforms(mut self, l: usize) -> Self {
        self.l_transforms = l;
        self
    }
}

/// A cascade of per-iteration stages over a fixed encoding operator shape.
pub struct UnrolledNetwork {
    pub config: NetworkConfig,
    pub stages: Vec<Stage>,
    pub params: ParameterStore,
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    pub output: NodeId,
    /// Image iterate after each stage (length n_stages).
    pub stage_outputs: Vec<NodeId>,
    /// ADMM auxiliary iterates (empty for other families).
    pub z_outputs: Vec<NodeId>,
    /// ADMM multiplier iterates (empty for other families).
    pub beta_outputs: Vec<NodeId>,
}

pub fn build_pdhg_net(state: LearningState, n_stages: usize) -> Result<UnrolledNetwork> {
    build_network(NetworkConfig::new(Family::Pdhg, state).with_stages(n_stages))
}

pub fn build_admm_net(state: LearningState, n_stages: usize, l: usize) -> Result<UnrolledNetwork> {
    build_network(
        NetworkConfig::new(Family::Admm, state)
            .with_stages(n_stages)
            .with_l_transforms(l),
    )
}

pub fn build_ista_net(state: LearningState, n_stages: usize) -> Result<UnrolledNetwork> {
    build_network(NetworkConfig::new(Family::Ista, state).with_stages(n_stages))
}

/// Block widths for every (family, state) template.
fn stage_template(cfg: &NetworkConfig) -> Result<(Vec<ScalarKind>, Vec<(BlockKind, ConvBlockSpec)>)> {
    let c = cfg.channels;
    let t = match (cfg.family, cfg.state) {
        (Family::Pdhg, LearningState::I) => (
            vec![ScalarKind::Sigma, ScalarKind::Tau, ScalarKind::ThetaPdhg],
            vec![(
                BlockKind::Lambda,
                ConvBlockSpec::new(&[c, 32, 32, c], true),
            )],
        ),
        (Family::Pdhg, LearningState::IStar) => (
            vec![ScalarKind::Sigma, ScalarKind::Tau, ScalarKind::ThetaPdhg],
            // Depth chosen so conv parameters equal state II exactly:
            // [c,32,64,c,32,c] totals 1442c + 18560 = (577c + 9280) + (865c + 9280).
            vec![(
                BlockKind::Lambda,
                ConvBlockSpec::new(&[c, 32, 64, c, 32, c], true),
            )],
        ),
        (Family::Pdhg, LearningState::II) => (
            vec![ScalarKind::Sigma, ScalarKind::Tau, ScalarKind::ThetaPdhg],
            vec![
                (
                    BlockKind::Gamma,
                    ConvBlockSpec::new(&[2 * c, 32, 32, c], false),
                ),
                (
                    BlockKind::Lambda,
                    ConvBlockSpec::new(&[c, 32, 32, c], true),
                ),
            ],
        ),
        (Family::Pdhg, LearningState::III) => (
            vec![],
            vec![
                (
                    BlockKind::Gamma,
                    ConvBlockSpec::new(&[3 * c, 32, 32, c], false),
                ),
                (
                    BlockKind::Lambda,
                    ConvBlockSpec::new(&[2 * c, 32, 32, c], false),
                ),
            ],
        ),
        (Family::Admm, LearningState::I) => {
            let mut scalars = vec![ScalarKind::Rho, ScalarKind::Mu1, ScalarKind::Mu2];
            let mut blocks = Vec::new();
            for l in 0..cfg.l_transforms {
                scalars.push(ScalarKind::LambdaTilde(l));
                blocks.push((BlockKind::Psi(l), ConvBlockSpec::new(&[c, 8, c], false)));
            }
            scalars.push(ScalarKind::EtaTilde);
            (scalars, blocks)
        }
        (Family::Admm, LearningState::II) => {
            let mut scalars = vec![
                ScalarKind::Gamma1,
                ScalarKind::Gamma2,
                ScalarKind::Mu1,
                ScalarKind::Mu2,
            ];
            let mut blocks = vec![(
                BlockKind::Gamma,
                ConvBlockSpec::new(&[2 * c, 32, c], false),
            )];
            for l in 0..cfg.l_transforms {
                scalars.push(ScalarKind::LambdaTilde(l));
                blocks.push((BlockKind::Psi(l), ConvBlockSpec::new(&[c, 8, c], false)));
            }
            scalars.push(ScalarKind::EtaTilde);
            (scalars, blocks)
        }
        (Family::Admm, LearningState::III) => (
            vec![ScalarKind::EtaTilde],
            vec![
                (
                    BlockKind::Gamma,
                    ConvBlockSpec::new(&[2 * c, 32, c], false),
                ),
                (
                    BlockKind::Pi,
                    ConvBlockSpec::new(&[3 * c, 32, c], false),
                ),
                (BlockKind::Lambda, ConvBlockSpec::new(&[c, 8, c], true)),
            ],
        ),
        (Family::Ista, LearningState::I) => (
            vec![ScalarKind::RhoStep, ScalarKind::ThetaShrink],
            vec![
                (BlockKind::G, ConvBlockSpec::new(&[c, 32, 32], false)),
                (BlockKind::GTilde, ConvBlockSpec::new(&[32, 32, c], false)),
            ],
        ),
        (Family::Ista, LearningState::II) => (
            vec![ScalarKind::RhoStep, ScalarKind::ThetaShrink],
            vec![
                (
                    BlockKind::Gamma,
                    ConvBlockSpec::new(&[2 * c, 32, c], false),
                ),
                (BlockKind::G, ConvBlockSpec::new(&[c, 32, 32], false)),
                (BlockKind::GTilde, ConvBlockSpec::new(&[32, 32, c], false)),
            ],
        ),
        (Family::Ista, LearningState::III) => (
            vec![ScalarKind::ThetaShrink],
            vec![
                (
                    BlockKind::Gamma,
                    ConvBlockSpec::new(&[2 * c, 32, c], false),
                ),
                (
                    BlockKind::Lambda,
                    ConvBlockSpec::new(&[2 * c, 32, 32, c], false),
                ),
                (BlockKind::G, ConvBlockSpec::new(&[c, 32, 32], false)),
                (BlockKind::GTilde, ConvBlockSpec::new(&[32, 32, c], false)),
            ],
        ),
        (family, state) => {
            return Err(Error::Argument(format!(
                "state {state} is not defined for the {family} family"
            )))
        }
    };
    Ok(t)
}

pub fn build_network(cfg: NetworkConfig) -> Result<UnrolledNetwork> {
    if cfg.channels == 0 {
        return Err(Error::Argument("channels must be positive".into()));
    }
    if cfg.family == Family::Admm && cfg.l_transforms == 0 {
        return Err(Error::Argument("admm networks need L >= 1".into()));
    }
    let (scalar_kinds, block_specs) = stage_template(&cfg)?;
    let mut store = ParameterStore::new();
    let mut stages = Vec::with_capacity(cfg.n_stages);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);

    for k in 0..cfg.n_stages {
        let mut scalars = Vec::new();
        for kind in &scalar_kinds {
            let id = store.register(
                &format!("stage{k:02}/{}", kind.name()),
                Tensor::scalar(kind.default_value()),
            )?;
            scalars.push((*kind, id));
        }
        let mut blocks = Vec::new();
        for (kind, spec) in &block_specs {
            let mut layers = Vec::new();
            let kernels = default_block_kernels(&cfg, *kind, spec, &mut rng);
            for (li, pair) in spec.widths.windows(2).enumerate() {
                let (cin, cout) = (pair[0], pair[1]);
                let kname = format!("stage{k:02}/{}/conv{li}/kernel", kind.name());
                let bname = format!("stage{k:02}/{}/conv{li}/bias", kind.name());
                let kid = store.register(
                    &kname,
                    Tensor::new(vec![3, 3, cin, cout], kernels[li].clone())?,
                )?;
                let bid = store.register(&bname, Tensor::zeros(&[cout]))?;
                layers.push((kid, bid));
            }
            blocks.push(ConvBlockParams {
                kind: *kind,
                spec: spec.clone(),
                layers,
            });
        }
        stages.push(Stage { scalars, blocks });
    }

    Ok(UnrolledNetwork {
        config: cfg,
        stages,
        params: store,
    })
}

/// Default kernels per block role. Residual-path blocks start as the
/// identity (zero final conv); the ista transform pair starts as an exact
/// mutually-inverse embedding plus a small random perturbation; fidelity
/// blocks with a closed-form classical counterpart start at that map.
fn default_block_kernels(
    cfg: &NetworkConfig,
    kind: BlockKind,
    spec: &ConvBlockSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let c = cfg.channels;
    let mut kernels: Vec<Vec<f64>> = spec
        .widths
        .windows(2)
        .map(|p| init::glorot_kernel(p[0], p[1], rng))
        .collect();

    let perturb = |kernels: &mut Vec<Vec<f64>>, base: &[Vec<f64>], rng: &mut ChaCha8Rng| {
        for (li, pair) in spec.widths.windows(2).enumerate() {
            let bound = 0.1 * init::glorot_bound(pair[0], pair[1]);
            let noise = init::glorot_kernel(pair[0], pair[1], rng);
            for (dst, (b, n)) in kernels[li]
                .iter_mut()
                .zip(base[li].iter().zip(noise.iter()))
            {
                *dst = b + n * bound / init::glorot_bound(pair[0], pair[1]).max(1e-12);
            }
        }
    };

    match (cfg.family, kind) {
        // ista sparsifier pair: near-exact inverse of each other so the
        // cascade starts as classical image-domain shrinkage.
        (Family::Ista, BlockKind::G) | (Family::Ista, BlockKind::GTilde) => {
            let fwd_widths = &[c, 32, 32][..];
            let bwd_widths = &[32, 32, c][..];
            if let Some((fwd, bwd)) = init::identity_pair_kernels(fwd_widths, bwd_widths) {
                let base = if kind == BlockKind::G { fwd } else { bwd };
                perturb(&mut kernels, &base, rng);
            }
        }
        // ista fidelity block: starts at the analytic residual Am - f.
        (Family::Ista, BlockKind::Gamma) => {
            if let Some(base) = init::linear_chain_kernels(&spec.widths, c, &[1.0, -1.0]) {
                perturb(&mut kernels, &base, rng);
            }
        }
        // residual-path blocks start as the identity correction
        _ => {
            let last = kernels.len() - 1;
            kernels[last].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    kernels
}

impl UnrolledNetwork {
    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn state(&self) -> LearningState {
        self.config.state
    }

    pub fn n_stages(&self) -> usize {
        self.config.n_stages
    }

    pub fn total_param_count(&self) -> usize {
        self.params.total_elements()
    }

    /// Convolution parameters (kernels + biases) in one stage.
    pub fn stage_conv_param_count(&self, k: usize) -> usize {
        self.stages[k].conv_param_count()
    }

    fn check_operator(&self, op: &Arc<dyn LinearOperator>, f: &Tensor) -> Result<()> {
        let dom = op.domain_shape();
        if dom.len() != 3 || dom[2] != self.config.channels {
            return Err(Error::Shape(format!(
                "network expects {}-channel images, operator domain is {:?}",
                self.config.channels, dom
            )));
        }
        op.check_range(f)?;
        Ok(())
    }

    /// Run one block on the tape: conv - relu - ... - conv (+ input if
    /// residual).
    fn apply_block_on(
        &self,
        tape: &mut Tape,
        block: &ConvBlockParams,
        input: NodeId,
    ) -> Result<NodeId> {
        let mut h = input;
        let n_layers = block.layers.len();
        for (li, (kid, bid)) in block.layers.iter().enumerate() {
            let k = tape.param(&self.params, *kid);
            let b = tape.param(&self.params, *bid);
            h = tape.conv2d(h, k, b)?;
            if li + 1 < n_layers {
                h = tape.relu(h);
            }
        }
        if block.spec.residual {
            h = tape.add(input, h)?;
        }
        Ok(h)
    }

    /// Apply a named block of a given stage (used by the symmetry loss).
    pub fn apply_block(
        &self,
        tape: &mut Tape,
        stage: usize,
        kind: BlockKind,
        input: NodeId,
    ) -> Result<NodeId> {
        let block = self.stages[stage]
            .block(kind)
            .ok_or_else(|| Error::Argument(format!("stage {stage} has no {kind:?} block")))?;
        self.apply_block_on(tape, block, input)
    }

    /// Record the full unrolled forward pass on `tape`. `m0` defaults to
    /// the zero-filled adjoint A^H f.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        op: &Arc<dyn LinearOperator>,
        f: &Tensor,
        m0: Option<&Tensor>,
    ) -> Result<ForwardPass> {
        self.check_operator(op, f)?;
        let m0t = match m0 {
            Some(t) => {
                op.check_domain(t)?;
                t.clone_value()
            }
            None => op.adjoint(f)?,
        };
        let f_node = tape.leaf(f.clone_value());
        let m0_node = tape.leaf(m0t);
        match self.config.family {
            Family::Pdhg => self.forward_pdhg(tape, op, f_node, m0_node),
            Family::Admm => self.forward_admm(tape, op, f_node, m0_node),
            Family::Ista => self.forward_ista(tape, op, f_node, m0_node),
        }
    }

    /// Evaluation-only forward pass.
    pub fn forward(
        &self,
        op: &Arc<dyn LinearOperator>,
        f: &Tensor,
        m0: Option<&Tensor>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward_tape(&mut tape, op, f, m0)?;
        Ok(tape.value(pass.output).clone_value())
    }

    /// Per-stage image iterates (for stage-for-stage comparisons).
    pub fn forward_trace(
        &self,
        op: &Arc<dyn LinearOperator>,
        f: &Tensor,
        m0: Option<&Tensor>,
    ) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let pass = self.forward_tape(&mut tape, op, f, m0)?;
        Ok(pass
            .stage_outputs
            .iter()
            .map(|&id| tape.value(id).clone_value())
            .collect())
    }

    fn forward_pdhg(
        &self,
        tape: &mut Tape,
        op: &Arc<dyn LinearOperator>,
        f: NodeId,
        m0: NodeId,
    ) -> Result<ForwardPass> {
        let range = op.range_shape().to_vec();
        let mut m = m0;
        let mut m_bar = m0;
        let mut d = tape.leaf(Tensor::zeros(&range));
        let one = tape.constant(1.0);
        let mut stage_outputs = Vec::with_capacity(self.stages.len());

        for stage in &self.stages {
            match self.config.state {
                LearningState::I | LearningState::IStar | LearningState::II => {
                    let sigma = tape.param(&self.params, stage.scalar(ScalarKind::Sigma).unwrap());
                    let tau = tape.param(&self.params, stage.scalar(ScalarKind::Tau).unwrap());
                    let theta =
                        tape.param(&self.params, stage.scalar(ScalarKind::ThetaPdhg).unwrap());

                    let am_bar = tape.linear_apply(op, m_bar)?;
                    let sam = tape.scalar_mul(sigma, am_bar)?;
                    let v = tape.add(d, sam)?;

                    let d_new = if self.config.state == LearningState::II {
                        // learned dual prox with a residual connection to v
                        let cat = tape.concat_channels(&[v, f])?;
                        let gamma = stage.block(BlockKind::Gamma).unwrap();
                        let corr = self.apply_block_on(tape, gamma, cat)?;
                        tape.add(v, corr)?
                    } else {
                        // closed form (v - sigma f) / (1 + sigma)
                        let sf = tape.scalar_mul(sigma, f)?;
                        let num = tape.sub(v, sf)?;
                        let denom = tape.add(one, sigma)?;
                        let inv = tape.reciprocal(denom);
                        tape.scalar_mul(inv, num)?
                    };

                    let atd = tape.linear_adjoint(op, d_new)?;
                    let step = tape.scalar_mul(tau, atd)?;
                    let u = tape.sub(m, step)?;
                    let lambda = stage.block(BlockKind::Lambda).unwrap();
                    let m_new = self.apply_block_on(tape, lambda, u)?;

                    let diff = tape.sub(m_new, m)?;
                    let ext = tape.scalar_mul(theta, diff)?;
                    m_bar = tape.add(m_new, ext)?;
                    m = m_new;
                    d = d_new;
                }
                LearningState::III => {
                    // d <- d + Gamma(d, Am, f); m <- m + Lambda(m, A^T d)
                    let am = tape.linear_apply(op, m)?;
                    let cat_d = tape.concat_channels(&[d, am, f])?;
                    let gamma = stage.block(BlockKind::Gamma).unwrap();
                    let corr_d = self.apply_block_on(tape, gamma, cat_d)?;
                    let d_new = tape.add(d, corr_d)?;

                    let atd = tape.linear_adjoint(op, d_new)?;
                    let cat_m = tape.concat_channels(&[m, atd])?;
                    let lambda = stage.block(BlockKind::Lambda).unwrap();
                    let corr_m = self.apply_block_on(tape, lambda, cat_m)?;
                    m = tape.add(m, corr_m)?;
                    d = d_new;
                }
            }
            stage_outputs.push(m);
        }
        Ok(ForwardPass {
            output: m,
            stage_outputs,
            z_outputs: Vec::new(),
            beta_outputs: Vec::new(),
        })
    }

    fn forward_admm(
        &self,
        tape: &mut Tape,
        op: &Arc<dyn LinearOperator>,
        f: NodeId,
        m0: NodeId,
    ) -> Result<ForwardPass> {
        let domain = op.domain_shape().to_vec();
        let mut m = m0;
        let mut z = m0;
        let mut beta = tape.leaf(Tensor::zeros(&domain));
        let atf = tape.linear_adjoint(op, f)?;
        let mut stage_outputs = Vec::with_capacity(self.stages.len());
        let mut z_outputs = Vec::with_capacity(self.stages.len());
        let mut beta_outputs = Vec::with_capacity(self.stages.len());

        for stage in &self.stages {
            let z_prev = z;
            match self.config.state {
                LearningState::I => {
                    let rho_raw =
                        tape.param(&self.params, stage.scalar(ScalarKind::Rho).unwrap());
                    let rho = tape.softplus(rho_raw);
                    let zb = tape.sub(z, beta)?;
                    let rzb = tape.scalar_mul(rho, zb)?;
                    let rhs = tape.add(atf, rzb)?;
                    m = tape.normal_solve(op, rhs, rho)?;
                }
                LearningState::II => {
                    let g1 = tape.param(&self.params, stage.scalar(ScalarKind::Gamma1).unwrap());
                    let g2 = tape.param(&self.params, stage.scalar(ScalarKind::Gamma2).unwrap());
                    let am = tape.linear_apply(op, m)?;
                    let cat = tape.concat_channels(&[am, f])?;
                    let gamma = stage.block(BlockKind::Gamma).unwrap();
                    let gout = self.apply_block_on(tape, gamma, cat)?;
                    let atg = tape.linear_adjoint(op, gout)?;
                    let t1 = tape.scalar_mul(g1, m)?;
                    let zb = tape.sub(z, beta)?;
                    let t2 = tape.scalar_mul(g2, zb)?;
                    let sum = tape.add(t1, t2)?;
                    m = tape.sub(sum, atg)?;
                }
                LearningState::III => {
                    let am = tape.linear_apply(op, m)?;
                    let cat = tape.concat_channels(&[am, f])?;
                    let gamma = stage.block(BlockKind::Gamma).unwrap();
                    let d = self.apply_block_on(tape, gamma, cat)?;
                    let atd = tape.linear_adjoint(op, d)?;
                    let zb = tape.sub(z, beta)?;
                    let cat_m = tape.concat_channels(&[m, zb, atd])?;
                    let pi = stage.block(BlockKind::Pi).unwrap();
                    let corr = self.apply_block_on(tape, pi, cat_m)?;
                    m = tape.add(m, corr)?;
                }
                LearningState::IStar => unreachable!("rejected at build time"),
            }

            // z-update
            match self.config.state {
                LearningState::I | LearningState::II => {
                    let mu1 = tape.param(&self.params, stage.scalar(ScalarKind::Mu1).unwrap());
                    let mu2 = tape.param(&self.params, stage.scalar(ScalarKind::Mu2).unwrap());
                    let mb = tape.add(m, beta)?;
                    let t1 = tape.scalar_mul(mu1, z_prev)?;
                    let t2 = tape.scalar_mul(mu2, mb)?;
                    let mut acc = tape.add(t1, t2)?;
                    for l in 0..self.config.l_transforms {
                        let lam = tape.param(
                            &self.params,
                            stage.scalar(ScalarKind::LambdaTilde(l)).unwrap(),
                        );
                        let psi = stage.block(BlockKind::Psi(l)).unwrap();
                        let pout = self.apply_block_on(tape, psi, z_prev)?;
                        let scaled = tape.scalar_mul(lam, pout)?;
                        acc = tape.sub(acc, scaled)?;
                    }
                    z = acc;
                }
                LearningState::III => {
                    let mb = tape.add(m, beta)?;
                    let lambda = stage.block(BlockKind::Lambda).unwrap();
                    z = self.apply_block_on(tape, lambda, mb)?;
                }
                LearningState::IStar => unreachable!(),
            }

            // multiplier update
            let eta = tape.param(&self.params, stage.scalar(ScalarKind::EtaTilde).unwrap());
            let mz = tape.sub(m, z)?;
            let step = tape.scalar_mul(eta, mz)?;
            beta = tape.add(beta, step)?;

            stage_outputs.push(m);
            z_outputs.push(z);
            beta_outputs.push(beta);
        }
        Ok(ForwardPass {
            output: m,
            stage_outputs,
            z_outputs,
            beta_outputs,
        })
    }

    fn forward_ista(
        &self,
        tape: &mut Tape,
        op: &Arc<dyn LinearOperator>,
        f: NodeId,
        m0: NodeId,
    ) -> Result<ForwardPass> {
        let mut m = m0;
        let mut stage_outputs = Vec::with_capacity(self.stages.len());

        for stage in &self.stages {
            let r = match self.config.state {
                LearningState::I => {
                    let rho = tape.param(&self.params, stage.scalar(ScalarKind::RhoStep).unwrap());
                    let am = tape.linear_apply(op, m)?;
                    let resid = tape.sub(am, f)?;
                    let at = tape.linear_adjoint(op, resid)?;
                    let step = tape.scalar_mul(rho, at)?;
                    tape.sub(m, step)?
                }
                LearningState::II => {
                    let rho = tape.param(&self.params, stage.scalar(ScalarKind::RhoStep).unwrap());
                    let am = tape.linear_apply(op, m)?;
                    let cat = tape.concat_channels(&[am, f])?;
                    let gamma = stage.block(BlockKind::Gamma).unwrap();
                    let d = self.apply_block_on(tape, gamma, cat)?;
                    let at = tape.linear_adjoint(op, d)?;
                    let step = tape.scalar_mul(rho, at)?;
                    tape.sub(m, step)?
                }
                LearningState::III => {
                    let am = tape.linear_apply(op, m)?;
                    let cat = tape.concat_channels(&[am, f])?;
                    let gamma = stage.block(BlockKind::Gamma).unwrap();
                    let d = self.apply_block_on(tape, gamma, cat)?;
                    let atd = tape.linear_adjoint(op, d)?;
                    let cat_m = tape.concat_channels(&[m, atd])?;
                    let lambda = stage.block(BlockKind::Lambda).unwrap();
                    let corr = self.apply_block_on(tape, lambda, cat_m)?;
                    tape.add(m, corr)?
                }
                LearningState::IStar => unreachable!("rejected at build time"),
            };

            // m <- G_tilde(soft(G(r), softplus(theta_raw)))
            let theta_raw =
                tape.param(&self.params, stage.scalar(ScalarKind::ThetaShrink).unwrap());
            let theta = tape.softplus(theta_raw);
            let g = stage.block(BlockKind::G).unwrap();
            let coeffs = self.apply_block_on(tape, g, r)?;
            let thr = tape.soft_threshold(coeffs, theta)?;
            let gt = stage.block(BlockKind::GTilde).unwrap();
            m = self.apply_block_on(tape, gt, thr)?;

            stage_outputs.push(m);
        }
        Ok(ForwardPass {
            output: m,
            stage_outputs,
            z_outputs: Vec::new(),
            beta_outputs: Vec::new(),
        })
    }

    // Helpers used by reduction tests and freezing experiments.

    /// Set every layer of a block to zeros (identity for residual blocks,
    /// zero correction for the rest).
    pub fn set_block_zero(&mut self, stage: usize, kind: BlockKind) -> Result<()> {
        let layers: Vec<(ParamId, ParamId)> = self.stages[stage]
            .block(kind)
            .ok_or_else(|| Error::Argument(format!("stage {stage} has no {kind:?} block")))?
            .layers
            .clone();
        for (kid, bid) in layers {
            let klen = self.params.value(kid).len();
            let blen = self.params.value(bid).len();
            let kname = self.params.get(kid).name.clone();
            let bname = self.params.get(bid).name.clone();
            self.params.set_value(&kname, &vec![0.0; klen])?;
            self.params.set_value(&bname, &vec![0.0; blen])?;
        }
        Ok(())
    }

    /// Zero only the final convolution so the block computes exactly its
    /// skip path.
    pub fn set_block_identity(&mut self, stage: usize, kind: BlockKind) -> Result<()> {
        let (kid, bid) = *self.stages[stage]
            .block(kind)
            .ok_or_else(|| Error::Argument(format!("stage {stage} has no {kind:?} block")))?
            .layers
            .last()
            .unwrap();
        let klen = self.params.value(kid).len();
        let blen = self.params.value(bid).len();
        let kname = self.params.get(kid).name.clone();
        let bname = self.params.get(bid).name.clone();
        self.params.set_value(&kname, &vec![0.0; klen])?;
        self.params.set_value(&bname, &vec![0.0; blen])?;
        Ok(())
    }

    /// Freeze a block to the exact linear map sum_g coeffs[g] * group_g of
    /// its channel groups, realized through the ReLU chain.
    pub fn freeze_block_linear(
        &mut self,
        stage: usize,
        kind: BlockKind,
        coeffs: &[f64],
    ) -> Result<()> {
        let block = self.stages[stage]
            .block(kind)
            .ok_or_else(|| Error::Argument(format!("stage {stage} has no {kind:?} block")))?;
        let widths = block.spec.widths.clone();
        let layers = block.layers.clone();
        let kernels = init::linear_chain_kernels(&widths, self.config.channels, coeffs)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "block {kind:?} with widths {widths:?} cannot hold a {}-group linear map",
                    coeffs.len()
                ))
            })?;
        for ((kid, bid), kdata) in layers.iter().zip(kernels.iter()) {
            let kname = self.params.get(*kid).name.clone();
            let bname = self.params.get(*bid).name.clone();
            let blen = self.params.value(*bid).len();
            self.params.set_value(&kname, kdata)?;
            self.params.set_value(&bname, &vec![0.0; blen])?;
        }
        Ok(())
    }

    /// Set the ista transform pair of one stage to an exact mutually
    /// inverse embedding (G_tilde(G(x)) == x, and thresholding between
    /// them equals image-domain soft thresholding).
    pub fn set_prox_identity_pair(&mut self, stage: usize) -> Result<()> {
        let g = self.stages[stage]
            .block(BlockKind::G)
            .ok_or_else(|| Error::Argument("no G block".into()))?;
        let gt = self.stages[stage]
            .block(BlockKind::GTilde)
            .ok_or_else(|| Error::Argument("no G_tilde block".into()))?;
        let (fwd, bwd) =
            init::identity_pair_kernels(&g.spec.widths, &gt.spec.widths).ok_or_else(|| {
                Error::Argument("transform pair too narrow for an exact identity".into())
            })?;
        let g_layers = g.layers.clone();
        let gt_layers = gt.layers.clone();
        for ((kid, bid), kdata) in g_layers.iter().zip(fwd.iter()) {
            let kname = self.params.get(*kid).name.clone();
            let bname = self.params.get(*bid).name.clone();
            let blen = self.params.value(*bid).len();
            self.params.set_value(&kname, kdata)?;
            self.params.set_value(&bname, &vec![0.0; blen])?;
        }
        for ((kid, bid), kdata) in gt_layers.iter().zip(bwd.iter()) {
            let kname = self.params.get(*kid).name.clone();
            let bname = self.params.get(*bid).name.clone();
            let blen = self.params.value(*bid).len();
            self.params.set_value(&kname, kdata)?;
            self.params.set_value(&bname, &vec![0.0; blen])?;
        }
        Ok(())
    }

    /// Set a named scalar in every stage. Softplus-reparameterized scalars
    /// (`rho`, `theta_shrink`) are given as effective values and stored
    /// through the softplus inverse.
    pub fn set_scalar_all_stages(&mut self, kind: ScalarKind, value: f64) -> Result<()> {
        let stored = if kind.is_softplus_reparam() {
            softplus_inverse(value)
        } else {
            value
        };
        for k in 0..self.stages.len() {
            let id = self.stages[k]
                .scalar(kind)
                .ok_or_else(|| Error::Argument(format!("stage {k} has no scalar {kind:?}")))?;
            let name = self.params.get(id).name.clone();
            self.params.set_value(&name, &[stored])?;
        }
        Ok(())
    }
}
