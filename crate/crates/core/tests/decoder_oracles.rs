use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sql2text::decoder::{AttentionDecoder, AttentionKind, DecoderConfig, DecoderState};
use sql2text::encoder::{EncodedGraph, NodeEmbeddings};
use sql2text::nn::ParamSource;
use sql2text::tensor::{ParameterStore, Tape, Tensor, Var};
use sql2text::vocab::{BOS, EOS};

type Mat = Vec<Vec<f64>>;

struct Fixture {
    store: ParameterStore<f64>,
    dec: AttentionDecoder,
}

impl Fixture {
    fn new(config: DecoderConfig, vocab: usize, word_dim: usize, node_dim: usize) -> Self {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = AttentionDecoder::new(&mut ParamSource::fresh(&mut store, &mut rng, 0.1), config, vocab, word_dim, node_dim)
            .unwrap();
        Self { store, dec }
    }

    fn set(&mut self, name: &str, value: Tensor<f64>) {
        let id = self.store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
        self.store.set_value(id, value).unwrap();
    }

    fn set_rows(&mut self, name: &str, rows: &Mat) {
        self.set(name, Tensor::from_rows(rows).unwrap());
    }

    fn set_vec(&mut self, name: &str, v: Vec<f64>) {
        self.set(name, Tensor::vector(v));
    }

    fn zero_all(&mut self) {
        for id in self.store.ids().collect::<Vec<_>>() {
            self.store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn randomize(&mut self, seed: u64, scale: f64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in self.store.ids().collect::<Vec<_>>() {
            for x in self.store.value_mut(id).data_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        }
        rng
    }

    fn get(&self, name: &str) -> Mat {
        self.store.value(self.store.id(name).unwrap()).to_rows()
    }

    fn get_vec(&self, name: &str) -> Vec<f64> {
        self.store.value(self.store.id(name).unwrap()).data().to_vec()
    }
}

fn encoded(tape: &mut Tape<'_, f64>, nodes: &Mat, graph: Vec<f64>) -> EncodedGraph {
    let n = tape.constant(Tensor::from_rows(nodes).unwrap());
    let g = tape.constant(Tensor::matrix(1, graph.len(), graph).unwrap());
    EncodedGraph {
        nodes: n,
        graph: g,
        layers: NodeEmbeddings {
            initial: n,
            forward: vec![n],
            backward: vec![n],
            output: n,
        },
    }
}

fn config(hidden: usize, attention: AttentionKind) -> DecoderConfig {
    DecoderConfig {
        hidden_size: hidden,
        max_decode_len: 10,
        beam_size: 3,
        length_norm_alpha: 0.0,
        attention,
    }
}

fn attend(fx: &Fixture, nodes: &Mat) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new(&fx.store);
    let enc = encoded(&mut tape, nodes, vec![0.0; nodes[0].len()]);
    let memory = fx.dec.memory(&mut tape, enc.nodes).unwrap();
    let h = tape.constant(Tensor::matrix(1, fx.dec.config.hidden_size, vec![0.3; fx.dec.config.hidden_size]).unwrap());
    let (ctx, w) = fx.dec.attention(&mut tape, h, &memory).unwrap();
    (tape.value(ctx).data().to_vec(), tape.value(w).data().to_vec())
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn single_node_gets_all_attention() {
    let mut fx = Fixture::new(config(3, AttentionKind::Additive), 6, 2, 4);
    fx.randomize(1, 1.0);
    let nodes = vec![vec![0.1, -0.7, 0.25, 2.0]];
    let (ctx, w) = attend(&fx, &nodes);
    assert_eq!(w, [1.0]);
    assert_eq!(ctx, nodes[0]);
}

#[test]
fn identical_nodes_share_attention_uniformly() {
    let mut fx = Fixture::new(config(3, AttentionKind::Additive), 6, 2, 4);
    fx.randomize(2, 1.0);
    let nodes = vec![vec![0.5, -0.1, 0.3, 0.9]; 4];
    let (ctx, w) = attend(&fx, &nodes);
    assert!(close(&w, &[0.25; 4], 1e-15));
    assert!(close(&ctx, &nodes[0], 1e-15));
}

#[test]
fn scores_ln2_0_0_give_half_quarter_quarter() {
    let want = [0.5, 0.25, 0.25];

    // dot: score_v = b · e_v with a zero query matrix
    let mut fx = Fixture::new(config(2, AttentionKind::Dot), 6, 2, 2);
    fx.zero_all();
    fx.set_vec("decoder.attn.query.b", vec![1.0, 0.0]);
    let nodes = vec![vec![2f64.ln(), 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    let (ctx, w) = attend(&fx, &nodes);
    assert!(close(&w, &want, 1e-12), "{w:?}");
    let expect_ctx = [0.5 * 2f64.ln(), 0.0];
    assert!(close(&ctx, &expect_ctx, 1e-12));

    // additive: hidden 1, score_v = tanh(e_v[0]) with v = 1
    let mut fx = Fixture::new(config(1, AttentionKind::Additive), 6, 2, 2);
    fx.zero_all();
    fx.set_rows("decoder.attn.key.w", &vec![vec![1.0], vec![0.0]]);
    fx.set_rows("decoder.attn.score", &vec![vec![1.0]]);
    let nodes = vec![vec![2f64.ln().atanh(), 3.0], vec![0.0, -2.0], vec![0.0, 5.0]];
    let (_, w) = attend(&fx, &nodes);
    assert!(close(&w, &want, 1e-12), "{w:?}");
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn vec_mat(x: &[f64], w: &Mat, b: Option<&[f64]>) -> Vec<f64> {
    (0..w[0].len())
        .map(|j| b.map_or(0.0, |b| b[j]) + x.iter().zip(w).map(|(xi, row)| xi * row[j]).sum::<f64>())
        .collect()
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = x.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    x.iter().map(|v| v - z).collect()
}

/// Plain re-implementation of the input-feeding attention decoder.
struct Oracle {
    emb: Mat,
    init_w: Mat,
    init_b: Vec<f64>,
    x_w: Mat,
    x_b: Vec<f64>,
    h_w: Mat,
    q_w: Mat,
    q_b: Vec<f64>,
    k_w: Mat,
    k_b: Vec<f64>,
    v: Vec<f64>,
    o_w: Mat,
    o_b: Vec<f64>,
}

impl Oracle {
    fn from(fx: &Fixture) -> Self {
        Self {
            emb: fx.get("decoder.embedding"),
            init_w: fx.get("decoder.init.w"),
            init_b: fx.get_vec("decoder.init.b"),
            x_w: fx.get("decoder.cell.x.w"),
            x_b: fx.get_vec("decoder.cell.x.b"),
            h_w: fx.get("decoder.cell.h.w"),
            q_w: fx.get("decoder.attn.query.w"),
            q_b: fx.get_vec("decoder.attn.query.b"),
            k_w: fx.get("decoder.attn.key.w"),
            k_b: fx.get_vec("decoder.attn.key.b"),
            v: fx.get_vec("decoder.attn.score"),
            o_w: fx.get("decoder.output.w"),
            o_b: fx.get_vec("decoder.output.b"),
        }
    }

    /// Returns per-step `(log-probs, attention weights)` under teacher forcing.
    fn run(&self, nodes: &Mat, graph: &[f64], target: &[usize]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let hsz = self.h_w.len();
        let mut s: Vec<f64> = vec_mat(graph, &self.init_w, Some(&self.init_b)).iter().map(|x| x.tanh()).collect();
        let mut c = vec![0.0; hsz];
        let mut ctx = vec![0.0; nodes[0].len()];
        let mut prev = BOS;
        let mut out = Vec::new();
        for &y in target {
            let mut x = self.emb[prev].clone();
            x.extend(&ctx);
            let gx = vec_mat(&x, &self.x_w, Some(&self.x_b));
            let gh = vec_mat(&s, &self.h_w, None);
            let g: Vec<f64> = gx.iter().zip(&gh).map(|(a, b)| a + b).collect();
            for j in 0..hsz {
                let i = sigmoid(g[j]);
                let f = sigmoid(g[hsz + j]);
                let cand = g[2 * hsz + j].tanh();
                let o = sigmoid(g[3 * hsz + j]);
                c[j] = f * c[j] + i * cand;
                s[j] = o * c[j].tanh();
            }
            let q = vec_mat(&s, &self.q_w, Some(&self.q_b));
            let scores: Vec<f64> = nodes
                .iter()
                .map(|e| {
                    let k = vec_mat(e, &self.k_w, Some(&self.k_b));
                    k.iter().zip(&q).zip(&self.v).map(|((k, q), v)| (k + q).tanh() * v).sum()
                })
                .collect();
            let w: Vec<f64> = log_softmax(&scores).iter().map(|l| l.exp()).collect();
            ctx = (0..nodes[0].len()).map(|j| nodes.iter().zip(&w).map(|(e, w)| e[j] * w).sum()).collect();
            let mut pre = s.clone();
            pre.extend(&ctx);
            let logits = vec_mat(&pre, &self.o_w, Some(&self.o_b));
            out.push((log_softmax(&logits), w));
            prev = y;
        }
        out
    }
}

#[test]
fn two_step_unroll_matches_hand_recurrence() {
    let mut fx = Fixture::new(config(2, AttentionKind::Additive), 6, 3, 4);
    let mut rng = fx.randomize(9, 0.9);
    let nodes: Mat = (0..3).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let graph: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target = [4, EOS];
    let expected = Oracle::from(&fx).run(&nodes, &graph, &target);

    let mut tape = Tape::new(&fx.store);
    let enc = encoded(&mut tape, &nodes, graph.clone());
    let memory = fx.dec.memory(&mut tape, enc.nodes).unwrap();
    let mut state = fx.dec.init_state(&mut tape, enc.graph).unwrap();
    for (t, &y) in target.iter().enumerate() {
        let step = fx.dec.step::<f64, ChaCha8Rng>(&mut tape, &state, &memory, None).unwrap();
        let got = log_softmax(tape.value(step.logits).data());
        assert!(close(&got, &expected[t].0, 1e-12), "step {t}: {got:?} vs {:?}", expected[t].0);
        assert!(close(tape.value(step.weights).data(), &expected[t].1, 1e-12));
        state = DecoderState {
            prev_token: y,
            ..step.state
        };
    }
    let (loss, n) = fx.dec.sequence_loss::<f64, ChaCha8Rng>(&mut tape, &enc, &target, None).unwrap();
    let want = -(expected[0].0[4] + expected[1].0[EOS]);
    assert_eq!(n, 2);
    assert!((tape.value(loss).data()[0] - want).abs() < 1e-12);
}

#[test]
fn uniform_output_costs_ln_vocab_per_token() {
    // four specials plus one real token
    let vocab = 5;
    let mut fx = Fixture::new(config(3, AttentionKind::Additive), vocab, 2, 2);
    fx.randomize(4, 0.5);
    fx.set_rows("decoder.output.w", &vec![vec![0.0; vocab]; 5]);
    fx.set_vec("decoder.output.b", vec![0.0; vocab]);
    let mut tape = Tape::new(&fx.store);
    let enc = encoded(&mut tape, &vec![vec![0.2, 0.4], vec![-0.3, 0.1]], vec![0.5, -0.5]);
    let (loss, n) = fx.dec.sequence_loss::<f64, ChaCha8Rng>(&mut tape, &enc, &[4, 4, EOS], None).unwrap();
    let per_token = tape.value(loss).data()[0] / n as f64;
    assert!((per_token - (vocab as f64).ln()).abs() < 1e-12);
}

#[test]
fn eos_only_target_is_one_term() {
    let mut fx = Fixture::new(config(3, AttentionKind::Additive), 7, 2, 2);
    fx.randomize(5, 0.8);
    let nodes = vec![vec![0.2, 0.4], vec![-0.3, 0.1]];
    let graph = vec![0.5, -0.5];
    let mut tape = Tape::new(&fx.store);
    let enc = encoded(&mut tape, &nodes, graph.clone());
    let (loss, n) = fx.dec.sequence_loss::<f64, ChaCha8Rng>(&mut tape, &enc, &[EOS], None).unwrap();
    assert_eq!(n, 1);
    let memory = fx.dec.memory(&mut tape, enc.nodes).unwrap();
    let state = fx.dec.init_state(&mut tape, enc.graph).unwrap();
    let step = fx.dec.step::<f64, ChaCha8Rng>(&mut tape, &state, &memory, None).unwrap();
    let lp = log_softmax(tape.value(step.logits).data());
    assert!((tape.value(loss).data()[0] + lp[EOS]).abs() < 1e-12);

    assert!(fx.dec.sequence_loss::<f64, ChaCha8Rng>(&mut tape, &enc, &[], None).is_err());
    assert!(fx.dec.sequence_loss::<f64, ChaCha8Rng>(&mut tape, &enc, &[4], None).is_err());
}

#[test]
fn never_eos_model_is_truncated_at_max_len() {
    let vocab = 6;
    let mut fx = Fixture::new(config(3, AttentionKind::Additive), vocab, 2, 2);
    fx.randomize(6, 0.3);
    let mut bias = vec![0.0; vocab];
    bias[EOS] = -1e3;
    bias[5] = 4.0;
    fx.set_vec("decoder.output.b", bias);
    let mut tape = Tape::new(&fx.store);
    let enc = encoded(&mut tape, &vec![vec![0.2, 0.4]], vec![0.5, -0.5]);
    let greedy = fx.dec.greedy(&mut tape, &enc, 3).unwrap();
    assert_eq!(greedy.tokens.len(), 3);
    assert!(!greedy.terminated);
    for beam in 1..=4 {
        let cfg = DecoderConfig {
            max_decode_len: 3,
            beam_size: beam,
            ..fx.dec.config.clone()
        };
        let h = fx.dec.beam_search(&mut tape, &enc, &cfg).unwrap();
        assert_eq!(h.tokens.len(), 3, "beam {beam}");
        assert!(!h.terminated);
    }
}

/// A decoder whose next token is a fixed function of the previous one:
/// BOS → 4 → 5 → EOS, with every alternative about e^-40 less likely.
fn forced_fixture() -> Fixture {
    let vocab = 6;
    let hidden = vocab;
    let mut fx = Fixture::new(config(hidden, AttentionKind::Additive), vocab, vocab, 2);
    fx.zero_all();
    // one-hot token embeddings
    fx.set_rows(
        "decoder.embedding",
        &(0..vocab).map(|i| (0..vocab).map(|j| f64::from(u8::from(i == j))).collect()).collect(),
    );
    // input gate open, forget gate shut, output gate open, candidate = 3 · embedding
    let mut xw = vec![vec![0.0; 4 * hidden]; vocab + 2];
    for (i, row) in xw.iter_mut().enumerate().take(vocab) {
        row[2 * hidden + i] = 3.0;
    }
    fx.set_rows("decoder.cell.x.w", &xw);
    let mut xb = vec![0.0; 4 * hidden];
    for j in 0..hidden {
        xb[j] = 30.0;
        xb[hidden + j] = -30.0;
        xb[3 * hidden + j] = 30.0;
    }
    fx.set_vec("decoder.cell.x.b", xb);
    let mut ow = vec![vec![0.0; vocab]; hidden + 2];
    for (from, to) in [(BOS, 4), (4, 5), (5, EOS)] {
        ow[from][to] = 60.0;
    }
    fx.set_rows("decoder.output.w", &ow);
    fx
}

#[test]
fn forced_sequence_is_found_at_every_beam_size() {
    let fx = forced_fixture();
    let mut tape = Tape::new(&fx.store);
    let enc = encoded(&mut tape, &vec![vec![0.2, 0.4], vec![0.1, -0.3]], vec![0.5, -0.5]);
    let greedy = fx.dec.greedy(&mut tape, &enc, 10).unwrap();
    assert_eq!(greedy.tokens, [4, 5]);
    assert!(greedy.terminated);
    for beam in 1..=6 {
        let cfg = DecoderConfig {
            beam_size: beam,
            ..fx.dec.config.clone()
        };
        let h = fx.dec.beam_search(&mut tape, &enc, &cfg).unwrap();
        assert_eq!(h.tokens, [4, 5], "beam {beam}");
        assert!(h.terminated);
        assert!(h.log_prob > -1e-6);
    }
}

#[test]
fn hypothesis_log_prob_is_the_sum_of_step_log_probs() {
    let mut fx = Fixture::new(config(4, AttentionKind::Additive), 8, 3, 4);
    let mut rng = fx.randomize(12, 1.2);
    let nodes: Mat = (0..3).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let graph: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut tape = Tape::new(&fx.store);
    let enc = encoded(&mut tape, &nodes, graph.clone());
    let cfg = DecoderConfig {
        beam_size: 4,
        max_decode_len: 8,
        ..fx.dec.config.clone()
    };
    let h = fx.dec.beam_search(&mut tape, &enc, &cfg).unwrap();
    let mut target = h.tokens.clone();
    if h.terminated {
        target.push(EOS);
    }
    let steps = Oracle::from(&fx).run(&nodes, &graph, &target);
    let total: f64 = steps.iter().zip(&target).map(|((lp, _), &y)| lp[y]).sum();
    assert!((h.log_prob - total).abs() < 1e-9, "{} vs {total}", h.log_prob);
}

#[test]
fn init_state_projects_and_checks_dimension() {
    let mut fx = Fixture::new(config(3, AttentionKind::Additive), 6, 2, 4);
    fx.randomize(3, 1.0);
    fx.set_vec("decoder.init.b", vec![0.0; 3]);
    let mut tape = Tape::new(&fx.store);
    let zero = tape.constant(Tensor::zeros(vec![1, 4]));
    let s = fx.dec.init_state(&mut tape, zero).unwrap();
    assert_eq!(tape.value(s.hidden).data(), [0.0; 3]);
    assert_eq!(s.prev_token, BOS);
    let a = tape.constant(Tensor::matrix(1, 4, vec![1.0, 0.0, -1.0, 0.5]).unwrap());
    let b = tape.constant(Tensor::matrix(1, 4, vec![-1.0, 0.3, 0.0, 0.5]).unwrap());
    let (sa, sb) = (fx.dec.init_state(&mut tape, a).unwrap(), fx.dec.init_state(&mut tape, b).unwrap());
    assert_ne!(tape.value(sa.hidden).data(), tape.value(sb.hidden).data());
    let wrong: Var = tape.constant(Tensor::zeros(vec![1, 3]));
    assert!(fx.dec.init_state(&mut tape, wrong).is_err());
}

#[test]
fn zero_sized_configs_rejected() {
    let mut store = ParameterStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for bad in [
        DecoderConfig { beam_size: 0, ..DecoderConfig::default() },
        DecoderConfig { max_decode_len: 0, ..DecoderConfig::default() },
    ] {
        let mut src = ParamSource::fresh(&mut store, &mut rng, 0.1);
        assert!(AttentionDecoder::new(&mut src, bad, 5, 2, 2).is_err());
    }
}
