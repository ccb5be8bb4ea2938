//! The symmetric dual training loop.
//!
//! Each step runs the dual forward pass once, updates the discriminator on
//! `(b0, b0)` against `(b0, restored_b1)` with the restoration detached, then
//! updates the generator against the freshly updated discriminator.

mod adam;
mod config;

pub use adam::Adam;
pub use config::TrainConfig;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::TrainingTriplet;
use crate::error::{Error, Result};
use crate::losses::{self, graph as lg, DualPassOutputs, LossWeights};
use crate::net::{
    apply_bn_stats, discriminate, generate, init_networks, BnStat, Checkpoint, Forward, Mode, NetConfig, ParamStore,
    DISCRIMINATOR, GENERATOR,
};
use crate::tensor::{Tensor, Var};

/// Aligned NHWC batches of the three triplet images.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletBatch {
    pub criminal: Tensor,
    pub accomplice: Tensor,
    pub morphed: Tensor,
}

impl TripletBatch {
    pub fn new(criminal: Tensor, accomplice: Tensor, morphed: Tensor) -> Result<Self> {
        criminal.dims4()?;
        if criminal.shape() != accomplice.shape() || criminal.shape() != morphed.shape() {
            return Err(Error::shape("triplet batch images differ in shape"));
        }
        Ok(Self { criminal, accomplice, morphed })
    }

    pub fn from_triplets(triplets: &[&TrainingTriplet]) -> Result<Self> {
        if triplets.is_empty() {
            return Err(Error::InsufficientData("empty triplet batch".into()));
        }
        let pick = |f: fn(&TrainingTriplet) -> &crate::RasterImage| {
            Tensor::from_images(&triplets.iter().map(|t| f(t)).collect::<Vec<_>>())
        };
        Self::new(pick(|t| &t.criminal)?, pick(|t| &t.accomplice)?, pick(|t| &t.morphed)?)
    }

    pub fn len(&self) -> usize {
        self.criminal.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The same morphs with the contributor roles exchanged.
    pub fn swapped(&self) -> Self {
        Self { criminal: self.accomplice.clone(), accomplice: self.criminal.clone(), morphed: self.morphed.clone() }
    }
}

/// Graph handles of one dual pass; see [`DualPassOutputs`] for the roles.
#[derive(Clone, Copy, Debug)]
pub struct DualPass {
    pub restored_b1: Var,
    pub restored_a1: Var,
    pub restored_b2: Option<Var>,
    pub restored_a2: Option<Var>,
    pub feature_b: Var,
    pub feature_a: Var,
    pub feature_b2: Option<Var>,
    pub feature_a2: Option<Var>,
}

/// Builds the first-stage restorations and, when `sdn` is set, the second
/// stage that feeds each restoration back in as the auxiliary image.
pub fn dual_forward_graph(
    f: &mut Forward,
    store: &ParamStore,
    net: &NetConfig,
    a0: Var,
    b0: Var,
    ab0: Var,
    sdn: bool,
) -> Result<DualPass> {
    let (b1, fb) = generate(f, store, net, a0, ab0)?;
    let (a1, fa) = generate(f, store, net, b0, ab0)?;
    let mut pass = DualPass {
        restored_b1: b1,
        restored_a1: a1,
        restored_b2: None,
        restored_a2: None,
        feature_b: fb,
        feature_a: fa,
        feature_b2: None,
        feature_a2: None,
    };
    if sdn {
        let (b2, fb2) = generate(f, store, net, a1, ab0)?;
        let (a2, fa2) = generate(f, store, net, b1, ab0)?;
        pass.restored_b2 = Some(b2);
        pass.restored_a2 = Some(a2);
        pass.feature_b2 = Some(fb2);
        pass.feature_a2 = Some(fa2);
    }
    Ok(pass)
}

/// Runs the dual pass and the discriminator on `(b0, restored_b1)`.
pub fn dual_forward(
    store: &ParamStore,
    net: &NetConfig,
    batch: &TripletBatch,
    sdn: bool,
    mode: Mode,
) -> Result<DualPassOutputs> {
    let mut f = Forward::new(mode);
    let a0 = f.input(batch.criminal.clone());
    let b0 = f.input(batch.accomplice.clone());
    let ab0 = f.input(batch.morphed.clone());
    let p = dual_forward_graph(&mut f, store, net, a0, b0, ab0, sdn)?;
    let d = discriminate(&mut f, store, net, b0, p.restored_b1)?;
    let val = |v: Var| f.graph.value(v).clone();
    Ok(DualPassOutputs {
        restored_b1: val(p.restored_b1),
        restored_a1: val(p.restored_a1),
        restored_b2: p.restored_b2.map(val),
        restored_a2: p.restored_a2.map(val),
        feature_b: val(p.feature_b),
        feature_a: val(p.feature_a),
        feature_b2: p.feature_b2.map(val),
        feature_a2: p.feature_a2.map(val),
        d_fake: f.graph.value(d).data().to_vec(),
    })
}

/// How many terms each composite loss summed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LossTerms {
    pub pixel: usize,
    pub symmetry: usize,
    pub feature: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub l_pix: f64,
    pub l_sym: f64,
    pub l_f: f64,
    pub l_adv: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub terms: LossTerms,
}

pub const LOG_HEADER: &str = "# step l_pix l_sym l_f l_adv l_g l_d";

impl StepMetrics {
    pub fn log_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {}",
            self.step, self.l_pix, self.l_sym, self.l_f, self.l_adv, self.l_g, self.l_d
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.l_pix, self.l_sym, self.l_f, self.l_adv, self.l_g, self.l_d].iter().all(|v| v.is_finite())
    }
}

/// The loss log: header line then one line per step.
pub fn format_log(metrics: &[StepMetrics]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for m in metrics {
        s.push_str(&m.log_line());
        s.push('\n');
    }
    s
}

/// A scalar objective and its gradient with respect to one network.
#[derive(Clone, Debug)]
pub struct Objective {
    pub value: f64,
    pub grads: BTreeMap<String, Tensor>,
    pub bn_stats: Vec<BnStat>,
}

struct GeneratorGraph {
    f: Forward,
    a0: Var,
    b0: Var,
    pass: DualPass,
}

struct GeneratorLoss {
    total: Var,
    l_pix: f64,
    l_sym: f64,
    l_f: f64,
    l_adv: f64,
    terms: LossTerms,
}

fn check_batch(net: &NetConfig, batch: &TripletBatch) -> Result<()> {
    let [_, h, w, _] = batch.criminal.dims4()?;
    if h != net.image_size || w != net.image_size {
        return Err(Error::shape(format!(
            "triplets are {h}x{w}, network expects {0}x{0}",
            net.image_size
        )));
    }
    Ok(())
}

fn generator_graph(store: &ParamStore, config: &TrainConfig, net: &NetConfig, batch: &TripletBatch) -> Result<GeneratorGraph> {
    check_batch(net, batch)?;
    let mut f = Forward::new(Mode::Train);
    f.freeze(DISCRIMINATOR);
    let a0 = f.input(batch.criminal.clone());
    let b0 = f.input(batch.accomplice.clone());
    let ab0 = f.input(batch.morphed.clone());
    let pass = dual_forward_graph(&mut f, store, net, a0, b0, ab0, !config.no_sdn)?;
    Ok(GeneratorGraph { f, a0, b0, pass })
}

fn generator_loss(
    gg: &mut GeneratorGraph,
    store: &ParamStore,
    config: &TrainConfig,
    net: &NetConfig,
) -> Result<GeneratorLoss> {
    let w: LossWeights = config.weights()?;
    let f = &mut gg.f;
    let (a0, p) = (gg.a0, gg.pass);
    let mut pairs = vec![(p.restored_b1, gg.b0)];
    pairs.extend(p.restored_b2.map(|v| (v, gg.b0)));
    pairs.push((p.restored_a1, a0));
    pairs.extend(p.restored_a2.map(|v| (v, a0)));

    let mut terms = LossTerms::default();
    let zero = f.input(Tensor::scalar(0.0));
    let mut pix = zero;
    if !config.no_pix {
        for &(r, gt) in &pairs {
            let l = lg::l1_mean(&mut f.graph, r, gt)?;
            pix = f.graph.add(pix, l)?;
            terms.pixel += 1;
        }
    }
    let mut sym = zero;
    if !config.no_sym {
        for &(r, _) in &pairs {
            let l = lg::symmetry(&mut f.graph, r)?;
            sym = f.graph.add(sym, l)?;
            terms.symmetry += 1;
        }
    }
    let mut feat = zero;
    if !config.no_f {
        for (second, first) in [(p.feature_a2, p.feature_a), (p.feature_b2, p.feature_b)] {
            if let Some(second) = second {
                let l = lg::l1_mean(&mut f.graph, second, first)?;
                feat = f.graph.add(feat, l)?;
                terms.feature += 1;
            }
        }
    }
    let d_fake = discriminate(f, store, net, gg.b0, p.restored_b1)?;
    let adv = lg::adversarial_gen(&mut f.graph, d_fake);

    let s = f.graph.scale(sym, w.beta1);
    let total = f.graph.add(pix, s)?;
    let s = f.graph.scale(feat, w.lambda1);
    let total = f.graph.add(total, s)?;
    let s = f.graph.scale(adv, w.lambda2);
    let total = f.graph.add(total, s)?;
    let item = |v: Var| f.graph.value(v).item();
    Ok(GeneratorLoss { total, l_pix: item(pix), l_sym: item(sym), l_f: item(feat), l_adv: item(adv), terms })
}

fn collect_grads(f: &Forward, loss: Var, prefix: &str) -> Result<BTreeMap<String, Tensor>> {
    let mut grads = f.graph.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, v) in f.bound_params() {
        if name.starts_with(prefix) && f.graph.requires_grad(v) {
            let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(f.graph.shape(v)));
            out.insert(name.clone(), g);
        }
    }
    Ok(out)
}

fn gen_stats(f: &Forward) -> Vec<BnStat> {
    f.bn_stats().iter().filter(|s| s.name.starts_with(GENERATOR)).cloned().collect()
}

/// The generator objective and its gradient over every generator parameter;
/// the discriminator is held fixed.
pub fn generator_objective(store: &ParamStore, config: &TrainConfig, batch: &TripletBatch) -> Result<Objective> {
    let net = config.net()?;
    let mut gg = generator_graph(store, config, &net, batch)?;
    let loss = generator_loss(&mut gg, store, config, &net)?;
    Ok(Objective {
        value: gg.f.graph.value(loss.total).item(),
        grads: collect_grads(&gg.f, loss.total, GENERATOR)?,
        bn_stats: gen_stats(&gg.f),
    })
}

/// The discriminator objective on `(b0, b0)` against `(b0, restored)` and
/// its gradient over every discriminator parameter.
pub fn discriminator_objective(
    store: &ParamStore,
    net: &NetConfig,
    accomplice: &Tensor,
    restored: &Tensor,
) -> Result<Objective> {
    let mut f = Forward::new(Mode::Train);
    let b0 = f.input(accomplice.clone());
    let b1 = f.input(restored.clone());
    let d_real = discriminate(&mut f, store, net, b0, b0)?;
    let d_fake = discriminate(&mut f, store, net, b0, b1)?;
    let loss = lg::discriminator(&mut f.graph, d_real, d_fake)?;
    Ok(Objective {
        value: f.graph.value(loss).item(),
        grads: collect_grads(&f, loss, DISCRIMINATOR)?,
        bn_stats: f.bn_stats().to_vec(),
    })
}

/// Network weights plus both optimizers.
pub struct Trainer {
    config: TrainConfig,
    net: NetConfig,
    store: ParamStore,
    gen_opt: Adam,
    disc_opt: Adam,
    step: usize,
}

impl Trainer {
    /// Fresh networks initialized from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = config.net()?;
        let store = init_networks(&net, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
        Self::with_store(config, store)
    }

    pub fn with_store(config: TrainConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let net = config.net()?;
        let adam = || Adam::new(config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps);
        Ok(Self { gen_opt: adam(), disc_opt: adam(), config, net, store, step: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.net, self.step as u64, self.store.clone())
    }

    pub fn train_step(&mut self, batch: &TripletBatch) -> Result<StepMetrics> {
        let step = self.step + 1;
        let diverged = |m: &StepMetrics| Error::Diverged { step, metrics: m.log_line() };
        let mut gg = generator_graph(&self.store, &self.config, &self.net, batch)?;
        let restored = gg.f.graph.value(gg.pass.restored_b1).clone();

        let d = discriminator_objective(&self.store, &self.net, &batch.accomplice, &restored)?;
        let mut metrics = StepMetrics {
            step,
            l_pix: f64::NAN,
            l_sym: f64::NAN,
            l_f: f64::NAN,
            l_adv: f64::NAN,
            l_g: f64::NAN,
            l_d: d.value,
            terms: LossTerms::default(),
        };
        if !d.value.is_finite() {
            return Err(diverged(&metrics));
        }
        self.disc_opt.step(&mut self.store, &d.grads)?;
        apply_bn_stats(&mut self.store, &d.bn_stats)?;

        let loss = generator_loss(&mut gg, &self.store, &self.config, &self.net)?;
        metrics.l_pix = loss.l_pix;
        metrics.l_sym = loss.l_sym;
        metrics.l_f = loss.l_f;
        metrics.l_adv = loss.l_adv;
        metrics.l_g = gg.f.graph.value(loss.total).item();
        metrics.terms = loss.terms;
        if !metrics.is_finite() {
            return Err(diverged(&metrics));
        }
        let grads = collect_grads(&gg.f, loss.total, GENERATOR)?;
        self.gen_opt.step(&mut self.store, &grads)?;
        apply_bn_stats(&mut self.store, &gen_stats(&gg.f))?;
        self.step = step;
        Ok(metrics)
    }
}

/// Seeded sampler that walks reshuffled permutations of the dataset.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self { order: (0..n).collect(), pos: n, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepMetrics>,
}

pub const LOSS_LOG_FILE: &str = "losses.log";
pub const FINAL_CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// Runs `config.steps` steps over `triplets`. With an output directory the
/// loss log, periodic checkpoints and the final checkpoint are written there.
pub fn train(config: &TrainConfig, triplets: &[TrainingTriplet], out: Option<&Path>) -> Result<TrainOutcome> {
    if triplets.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut trainer = Trainer::new(config.clone())?;
    let mut sampler = BatchSampler::new(triplets.len(), config.seed);
    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join(LOSS_LOG_FILE))?);
            writeln!(w, "{LOG_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let mut log = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let idx = sampler.next(config.batch_size);
        let picked: Vec<&TrainingTriplet> = idx.iter().map(|&i| &triplets[i]).collect();
        let batch = TripletBatch::from_triplets(&picked)?;
        let m = trainer.train_step(&batch)?;
        if let Some(w) = &mut log_file {
            writeln!(w, "{}", m.log_line())?;
        }
        if let (Some(dir), true) = (out, config.checkpoint_interval > 0) {
            if m.step % config.checkpoint_interval == 0 {
                if let Some(w) = &mut log_file {
                    w.flush()?;
                }
                trainer.checkpoint().save(dir.join(format!("checkpoint_{:06}.ckpt", m.step)))?;
            }
        }
        log.push(m);
    }
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = out {
        if let Some(mut w) = log_file {
            w.flush()?;
        }
        checkpoint.save(dir.join(FINAL_CHECKPOINT_FILE))?;
    }
    Ok(TrainOutcome { checkpoint, log })
}

/// Recomputes the generator objective from its parts.
pub fn total_from_parts(m: &StepMetrics, w: &LossWeights) -> f64 {
    losses::generator_total_loss(m.l_pix, m.l_sym, m.l_f, m.l_adv, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_config() -> TrainConfig {
        TrainConfig { image_size: 16, width_div: 16, batch_size: 2, steps: 3, ..Default::default() }
    }

    fn random_batch(seed: u64) -> TripletBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = || Tensor::new(vec![2, 16, 16, 3], (0..2 * 16 * 16 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        TripletBatch::new(t().unwrap(), t().unwrap(), t().unwrap()).unwrap()
    }

    fn params_equal(a: &ParamStore, b: &ParamStore) -> bool {
        a.params() == b.params()
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let config = TrainConfig { lr: 0.0, ..small_config() };
        let mut t = Trainer::new(config).unwrap();
        let before = t.store().clone();
        t.train_step(&random_batch(1)).unwrap();
        assert!(params_equal(&before, t.store()));
    }

    #[test]
    fn disabling_pixel_loss_removes_its_gradient() {
        let store = Trainer::new(small_config()).unwrap().store().clone();
        let batch = random_batch(2);
        let full = generator_objective(&store, &small_config(), &batch).unwrap();
        let pix_only = TrainConfig { no_sym: true, no_f: true, lambda2: 0.0, ..small_config() };
        let pix = generator_objective(&store, &pix_only, &batch).unwrap();
        let rest = generator_objective(&store, &TrainConfig { no_pix: true, ..small_config() }, &batch).unwrap();
        assert!((full.value - pix.value - rest.value).abs() < 1e-9);
        for (name, g) in &rest.grads {
            let expect: Vec<f64> = full.grads[name].data().iter().zip(pix.grads[name].data()).map(|(a, b)| a - b).collect();
            for (x, y) in g.data().iter().zip(&expect) {
                assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{name}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn objectives_touch_only_their_own_network() {
        let store = Trainer::new(small_config()).unwrap().store().clone();
        let batch = random_batch(3);
        let g = generator_objective(&store, &small_config(), &batch).unwrap();
        assert!(!g.grads.is_empty());
        assert!(g.grads.keys().all(|k| k.starts_with(GENERATOR)));
        let d = discriminator_objective(&store, &small_config().net().unwrap(), &batch.accomplice, &batch.morphed).unwrap();
        assert!(!d.grads.is_empty());
        assert!(d.grads.keys().all(|k| k.starts_with(DISCRIMINATOR)));
    }

    #[test]
    fn metrics_satisfy_the_composite_identity() {
        let config = small_config();
        let w = config.weights().unwrap();
        let mut t = Trainer::new(config).unwrap();
        for s in 0..3 {
            let m = t.train_step(&random_batch(10 + s)).unwrap();
            assert_eq!(m.step, s as usize + 1);
            assert!((m.l_g - total_from_parts(&m, &w)).abs() < 1e-12);
        }
    }

    #[test]
    fn term_counts_follow_the_dual_pass_flag() {
        let mut full = Trainer::new(small_config()).unwrap();
        let m = full.train_step(&random_batch(4)).unwrap();
        assert_eq!(m.terms, LossTerms { pixel: 4, symmetry: 4, feature: 2 });
        let mut single = Trainer::new(TrainConfig { no_sdn: true, ..small_config() }).unwrap();
        let m = single.train_step(&random_batch(4)).unwrap();
        assert_eq!(m.terms, LossTerms { pixel: 2, symmetry: 2, feature: 0 });
        assert_eq!(m.l_f, 0.0);
    }

    #[test]
    fn steps_are_reproducible() {
        let run = || {
            let mut t = Trainer::new(small_config()).unwrap();
            let log: Vec<String> = (0..2).map(|s| t.train_step(&random_batch(20 + s)).unwrap().log_line()).collect();
            (log, t.store().clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_loss_is_reported_as_divergence() {
        let mut store = Trainer::new(small_config()).unwrap().store().clone();
        store.param_mut("gen.res.out.bias").unwrap().data_mut()[0] = f64::NAN;
        let mut t = Trainer::with_store(small_config(), store).unwrap();
        assert!(matches!(t.train_step(&random_batch(5)), Err(Error::Diverged { step: 1, .. })));
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let mut t = Trainer::new(TrainConfig { image_size: 32, ..small_config() }).unwrap();
        assert!(matches!(t.train_step(&random_batch(6)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_steps_return_the_initialization() {
        let config = TrainConfig { steps: 0, ..small_config() };
        let face = |v| crate::RasterImage::filled(16, 16, [v, v, v]).unwrap();
        let triplet = TrainingTriplet {
            id: "t".into(),
            criminal: face(0.2),
            accomplice: face(-0.2),
            morphed: face(0.0),
            criminal_identity: 0,
            accomplice_identity: 1,
            params: crate::morph::MorphParams::new(0.5, 0.5).unwrap(),
        };
        let out = train(&config, &[triplet], None).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.checkpoint.store, Trainer::new(config).unwrap().store().clone());
    }

    #[test]
    fn empty_training_set_is_a_config_error() {
        assert!(matches!(train(&small_config(), &[], None), Err(Error::Config(_))));
    }

    #[test]
    fn sampler_visits_every_index_each_epoch() {
        let mut s = BatchSampler::new(5, 9);
        let mut seen: Vec<usize> = s.next(5);
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn swapping_exchanges_contributors() {
        let b = random_batch(7);
        let s = b.swapped();
        assert_eq!(s.criminal, b.accomplice);
        assert_eq!(s.accomplice, b.criminal);
        assert_eq!(s.swapped(), b);
    }
}
