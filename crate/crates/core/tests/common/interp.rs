//! An independent interpreter for the spiking network that executes it
//! neuron by neuron and counts every arithmetic step as it goes.

use rand::Rng;
use spkf_core::model::{build_model, ApproxLayers, EncoderBlock, ModelConfig};
use spkf_core::profile::OpTally;
use spkf_core::tensor::{BatchNormState, PoolSpec};
use spkf_core::{ApproxConfig, LifParams, SkipStats, SpikingConformer, Task, Tensor};

use super::{rng, uniform};

#[derive(Default, Debug, Clone, PartialEq)]
pub struct Counts {
    pub name: String,
    pub syn: u64,
    pub state: u64,
    pub core: u64,
    pub full: u64,
    pub updates: SkipStats,
}

pub struct Interp<'a> {
    cfg: &'a ModelConfig,
    layers: Vec<Counts>,
}

/// `raster[t][i]`
type Raster = Vec<Vec<f64>>;

fn fold(bn: &BatchNormState) -> (Vec<f64>, Vec<f64>) {
    bn.folded().unwrap()
}

impl Interp<'_> {
    fn gated(&self, family: Option<ApproxLayers>) -> bool {
        let a = &self.cfg.approx;
        a.enabled && family.is_some_and(|f| self.cfg.approx_layers.contains(f))
    }

    /// Runs `n` LIF neurons for `T` steps; `current(t, i, counts)` is only
    /// called for neurons whose current gets computed.
    fn population(
        &mut self,
        name: String,
        n: usize,
        family: Option<ApproxLayers>,
        mut current: impl FnMut(usize, usize, &mut Counts) -> f64,
    ) -> Raster {
        let LifParams { tau, v_th, v_reset } = self.cfg.lif;
        let steps = self.cfg.timesteps;
        let gated = self.gated(family);
        let t_th = self.cfg.approx.threshold;
        let mut c = Counts {
            name,
            ..Counts::default()
        };
        let mut v = vec![v_reset; n];
        let mut pos = vec![false; n];
        let mut out = vec![vec![0.0; n]; steps];
        for t in 0..steps {
            for i in 0..n {
                let compute = !gated || t < t_th || pos[i];
                let x = if compute {
                    c.updates.updates_performed += 1;
                    current(t, i, &mut c)
                } else {
                    c.updates.updates_skipped += 1;
                    0.0
                };
                if gated && t < t_th && x > 0.0 {
                    pos[i] = true;
                }
                let h = v[i] + (x - (v[i] - v_reset)) / tau;
                c.state += 2;
                c.full += 1;
                if h >= v_th {
                    out[t][i] = 1.0;
                    v[i] = v_reset;
                } else {
                    v[i] = h;
                }
            }
        }
        if family.is_none() {
            c.updates = SkipStats::default();
        }
        self.layers.push(c);
        out
    }

    /// Spike-driven `x W + b` at target `o` of token `row`, one add per input spike.
    fn fc(x: &[f64], w: &Tensor, b: &Tensor, o: usize, c: &mut Counts) -> f64 {
        let fan_out = w.shape()[1];
        let mut acc = b.data()[o];
        for (i, &s) in x.iter().enumerate() {
            if s != 0.0 {
                acc += w.data()[i * fan_out + o];
                c.syn += 1;
            }
        }
        acc
    }

    fn block(&mut self, idx: usize, e: &EncoderBlock, x: &Raster) -> Raster {
        let cfg = self.cfg;
        let (n_tok, d, dh) = (cfg.n_tokens(), cfg.embed_dim, cfg.mlp_hidden());
        let gain = cfg.lif.residual_gain();
        let scale = cfg.attention_scale;
        let row = |r: &Raster, t: usize, n: usize, w: usize| r[t][n * w..(n + 1) * w].to_vec();

        let mut qkv = Vec::new();
        for (name, w, b) in [("q", &e.wq, &e.bq), ("k", &e.wk, &e.bk), ("v", &e.wv, &e.bv)] {
            qkv.push(self.population(format!("enc{idx}.{name}"), n_tok * d, Some(ApproxLayers::QKV), |t, i, c| {
                Self::fc(&row(x, t, i / d, d), w, b, i % d, c)
            }));
        }
        let (q, k, v) = (&qkv[0], &qkv[1], &qkv[2]);

        // P[t] = K[t]^T (V[t] Wo), built from spikes with one add per spike and column.
        let mut p_all = Vec::new();
        let mut pre_adds = 0u64;
        for t in 0..cfg.timesteps {
            let mut u = vec![vec![0.0; d]; n_tok];
            for n in 0..n_tok {
                for j in 0..d {
                    if v[t][n * d + j] != 0.0 {
                        for o in 0..d {
                            u[n][o] += e.wo.data()[j * d + o];
                            pre_adds += 1;
                        }
                    }
                }
            }
            let mut p = vec![vec![0.0; d]; d];
            for n in 0..n_tok {
                for i in 0..d {
                    if k[t][n * d + i] != 0.0 {
                        for o in 0..d {
                            p[i][o] += u[n][o];
                            pre_adds += 1;
                        }
                    }
                }
            }
            p_all.push(p);
        }
        let x1 = self.population(format!("enc{idx}.attn"), n_tok * d, Some(ApproxLayers::ATTENTION), |t, i, c| {
            let (n, o) = (i / d, i % d);
            let mut acc = 0.0;
            for j in 0..d {
                if q[t][n * d + j] != 0.0 {
                    acc += p_all[t][j][o];
                    c.syn += 1;
                }
            }
            c.core += 1;
            let mut cur = scale * acc + e.bo.data()[o];
            if x[t][i] != 0.0 {
                cur += gain;
                c.syn += 1;
            }
            cur
        });
        let attn = self.layers.last_mut().unwrap();
        attn.syn += pre_adds;
        attn.full += attn.core;

        let (s1, h1) = fold(&e.bn_m1);
        let m1 = self.population(format!("enc{idx}.mlp1"), n_tok * dh, Some(ApproxLayers::MLP), |t, i, c| {
            let (n, o) = (i / dh, i % dh);
            s1[o] * Self::fc(&row(&x1, t, n, d), &e.mlp_w1, &e.mlp_b1, o, c) + h1[o]
        });
        let (s2, h2) = fold(&e.bn_m2);
        self.population(format!("enc{idx}.mlp2"), n_tok * d, Some(ApproxLayers::MLP), |t, i, c| {
            let (n, o) = (i / d, i % d);
            let mut cur = s2[o] * Self::fc(&row(&m1, t, n, dh), &e.mlp_w2, &e.mlp_b2, o, c) + h2[o];
            if x1[t][i] != 0.0 {
                cur += gain;
                c.syn += 1;
            }
            cur
        })
    }

    pub fn run(model: &SpikingConformer, seg: &Tensor) -> (Vec<Counts>, u64, [f64; 2]) {
        let cfg = &model.config;
        let mut it = Interp { cfg, layers: Vec::new() };
        let (k, ch, kt) = (cfg.conv_channels, cfg.channels, cfg.temporal_kernel);
        let (w1, n_tok, d) = (cfg.temporal_width(), cfg.n_tokens(), cfg.embed_dim);
        let c = &model.conv;
        let len = cfg.sample_len;

        // Real-valued encoding layer: the same current at every timestep.
        let (sc1, sh1) = fold(&c.bn1);
        let mut y1 = vec![0.0; k * ch * w1];
        for o in 0..k {
            for r in 0..ch {
                for w in 0..w1 {
                    let mut acc = c.temporal_b.data()[o];
                    for j in 0..kt {
                        acc += c.temporal_w.data()[o * kt + j] * seg.data()[r * len + w + j];
                    }
                    y1[(o * ch + r) * w1 + w] = sc1[o] * acc + sh1[o];
                }
            }
        }
        let encoding_macs = (k * ch * w1 * kt) as u64;
        let s1 = it.population("conv.temporal".into(), k * ch * w1, None, |_, i, _| y1[i]);

        let (sc2, sh2) = fold(&c.bn2);
        let s2 = it.population("conv.spatial".into(), k * w1, Some(ApproxLayers::SPATIAL), |t, i, cn| {
            let (o, w) = (i / w1, i % w1);
            let mut acc = c.spatial_b.data()[o];
            for ci in 0..k {
                for r in 0..ch {
                    if s1[t][(ci * ch + r) * w1 + w] != 0.0 {
                        acc += c.spatial_w.data()[(o * k + ci) * ch + r];
                        cn.syn += 1;
                    }
                }
            }
            sc2[o] * acc + sh2[o]
        });

        let PoolSpec { kernel: (_, pk), stride: (_, ps) } = cfg.pool;
        let (sc3, sh3) = fold(&c.bn3);
        let mut tokens = it.population("conv.proj".into(), n_tok * d, Some(ApproxLayers::PROJECTION), |t, i, cn| {
            let (n, o) = (i / d, i % d);
            let mut acc = c.proj_b.data()[o];
            for ci in 0..k {
                let window = &s2[t][ci * w1 + n * ps..ci * w1 + n * ps + pk];
                let spikes = window.iter().filter(|&&s| s != 0.0).count();
                cn.syn += spikes as u64;
                if spikes > 0 {
                    acc += (window.iter().sum::<f64>() / pk as f64) * c.proj_w.data()[o * k + ci];
                }
            }
            sc3[o] * acc + sh3[o]
        });

        for (i, e) in model.encoders.iter().enumerate() {
            tokens = it.block(i, e, &tokens);
        }

        let h = cfg.head_hidden;
        let mut head = Counts {
            name: "head".into(),
            ..Counts::default()
        };
        let mut rates = vec![0.0; d];
        for row in &tokens {
            for (j, &s) in row.iter().enumerate() {
                if s != 0.0 {
                    rates[j % d] += 1.0;
                    head.syn += 1;
                }
            }
        }
        for r in &mut rates {
            *r /= (cfg.timesteps * n_tok) as f64;
            head.core += 1;
        }
        let hd = &model.head;
        let mut hidden = vec![0.0; h];
        for (o, hv) in hidden.iter_mut().enumerate() {
            let mut acc = hd.b1.data()[o];
            for j in 0..d {
                acc += rates[j] * hd.w1.data()[j * h + o];
                head.syn += 1;
                head.core += 1;
            }
            *hv = acc.max(0.0);
        }
        let mut logits = [0.0; 2];
        for (o, l) in logits.iter_mut().enumerate() {
            let mut acc = hd.b2.data()[o];
            for j in 0..h {
                acc += hidden[j] * hd.w2.data()[j * 2 + o];
                head.syn += 1;
                head.core += 1;
            }
            *l = acc;
        }
        head.full = head.core;
        it.layers.push(head);
        (it.layers, encoding_macs, logits)
    }
}

pub fn random_model(seed: u64) -> (SpikingConformer, Tensor) {
    let mut r = rng(seed);
    let steps = r.random_range(1..=4);
    let kt = r.random_range(1..=4);
    let (pk, ps) = (r.random_range(1..=4), r.random_range(1..=4));
    let n_tok = r.random_range(1..=3);
    let sample_len = kt - 1 + pk + ps * (n_tok - 1) + r.random_range(0..ps);
    let cfg = ModelConfig {
        task: Task::Detection,
        channels: r.random_range(1..=3),
        sample_len,
        timesteps: steps,
        conv_channels: r.random_range(1..=3),
        embed_dim: r.random_range(1..=4),
        encoders: r.random_range(0..=2),
        mlp_ratio: [0.5, 1.0, 1.5][r.random_range(0..3)],
        head_hidden: r.random_range(1..=3),
        temporal_kernel: kt,
        pool: PoolSpec {
            kernel: (1, pk),
            stride: (1, ps),
        },
        attention_scale: [0.125, 0.5, 1.0][r.random_range(0..3)],
        lif: LifParams::default(),
        approx: ApproxConfig {
            timesteps: steps,
            threshold: r.random_range(0..=steps),
            enabled: r.random_bool(0.7),
        },
        approx_layers: ApproxLayers::from_bits(r.random_range(0..32)),
    };
    assert_eq!(cfg.n_tokens(), n_tok);
    cfg.validate().unwrap();
    let mut m = build_model(&cfg, seed).unwrap();
    let gain: f64 = r.random_range(0.5..2.5);
    for p in m.parameters_mut() {
        p.data_mut().iter_mut().for_each(|v| *v *= gain);
    }
    let mut bns: Vec<&mut BatchNormState> = vec![&mut m.conv.bn1, &mut m.conv.bn2, &mut m.conv.bn3];
    for e in &mut m.encoders {
        bns.push(&mut e.bn_m1);
        bns.push(&mut e.bn_m2);
    }
    for bn in bns {
        bn.running_mean.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
        bn.running_var.iter_mut().for_each(|v| *v = r.random_range(0.3..2.0));
        bn.beta.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.3..1.2));
    }
    let seg = uniform(&mut r, &[cfg.channels, cfg.sample_len], -3.0, 3.0);
    (m, seg)
}

pub fn compare(tally: &OpTally, oracle: &[Counts], encoding: u64) -> Result<(), String> {
    let names: Vec<&str> = tally.per_layer.iter().map(|l| l.layer.as_str()).collect();
    let expected: Vec<&str> = oracle.iter().map(|c| c.name.as_str()).collect();
    if names != expected {
        return Err(format!("layers {names:?} vs {expected:?}"));
    }
    for (l, c) in tally.per_layer.iter().zip(oracle) {
        let got = (l.synaptic_adds, l.state_adds, l.core_muls, l.full_muls, l.updates);
        let want = (c.syn, c.state, c.core, c.full, c.updates);
        if got != want {
            return Err(format!("{}: counted {got:?}, interpreter {want:?}", c.name));
        }
    }
    let adds: u64 = oracle.iter().map(|c| c.syn + c.state).sum();
    let core: u64 = oracle.iter().map(|c| c.core).sum();
    let full: u64 = oracle.iter().map(|c| c.full).sum();
    if (tally.adds, tally.core_muls, tally.full_muls, tally.encoding_macs) != (adds, core, full, encoding) {
        return Err("totals differ".into());
    }
    Ok(())
}

