//! The full graph-to-sequence model: vocabularies, parameters, encoder and
//! decoder bundled together.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{AttentionDecoder, DecoderConfig, Dropout, Hypothesis};
use crate::encoder::{EncodedGraph, EncoderConfig, GraphEncoder};
use crate::error::{Error, Result};
use crate::nn::ParamSource;
use crate::repr::{build_graph, QueryGraph};
use crate::sql::SqlQuery;
use crate::tensor::{finite_difference_check, finite_difference_check_against, GradCheckConfig, GradCheckReport, ParameterStore, Real, Tape, Var};
use crate::vocab::{Vocabulary, EOS, SUPER_TOKEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub dropout: f64,
    /// Half-width of the uniform initialisation range.
    pub init_scale: f64,
    /// Treat the query graph as undirected (ablation).
    pub undirected: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            dropout: 0.5,
            init_scale: 0.12,
            undirected: false,
        }
    }
}

/// A query graph with its node texts mapped to source ids.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub graph: QueryGraph,
    pub node_tokens: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct Graph2Seq<T: Real = f32> {
    pub config: ModelConfig,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub params: ParameterStore<T>,
    pub encoder: GraphEncoder,
    pub decoder: AttentionDecoder,
}

impl<T: Real> Graph2Seq<T> {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, mut src_vocab: Vocabulary, tgt_vocab: Vocabulary, seed: u64) -> Result<Self> {
        src_vocab.insert(SUPER_TOKEN);
        let mut params = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut src = ParamSource::fresh(&mut params, &mut rng, config.init_scale);
        let (encoder, decoder) = Self::layout(&mut src, &config, &src_vocab, &tgt_vocab)?;
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            params,
            encoder,
            decoder,
        })
    }

    /// Rebuilds a model around existing parameters, checking every name and shape.
    pub fn from_parts(
        config: ModelConfig,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        mut params: ParameterStore<T>,
    ) -> Result<Self> {
        if src_vocab.get(SUPER_TOKEN).is_none() {
            return Err(Error::Invalid(format!("source vocabulary lacks {SUPER_TOKEN}")));
        }
        let mut src = ParamSource::bind(&mut params);
        let (encoder, decoder) = Self::layout(&mut src, &config, &src_vocab, &tgt_vocab)?;
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            params,
            encoder,
            decoder,
        })
    }

    fn layout(
        src: &mut ParamSource<'_, T>,
        config: &ModelConfig,
        src_vocab: &Vocabulary,
        tgt_vocab: &Vocabulary,
    ) -> Result<(GraphEncoder, AttentionDecoder)> {
        if config.word_dim == 0 {
            return Err(Error::Config("word_dim must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let encoder = GraphEncoder::new(src, config.encoder.clone(), src_vocab.len(), config.word_dim)?;
        let decoder = AttentionDecoder::new(
            src,
            config.decoder.clone(),
            tgt_vocab.len(),
            config.word_dim,
            encoder.output_dim(),
        )?;
        Ok((encoder, decoder))
    }

    pub fn prepare(&self, query: &SqlQuery) -> PreparedGraph {
        let mut graph = build_graph(query);
        if self.config.undirected {
            graph = graph.to_undirected();
        }
        let node_tokens = graph
            .nodes()
            .iter()
            .map(|n| self.src_vocab.encode(&n.text))
            .collect();
        PreparedGraph { graph, node_tokens }
    }

    /// Target token ids with EOS appended.
    pub fn target_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut ids = self.tgt_vocab.encode(tokens);
        ids.push(EOS);
        ids
    }

    pub fn encode(&self, tape: &mut Tape<'_, T>, prepared: &PreparedGraph) -> Result<EncodedGraph> {
        let super_id = self.src_vocab.id(SUPER_TOKEN);
        self.encoder
            .encode(tape, &prepared.graph, &prepared.node_tokens, super_id)
    }

    /// Token-averaged negative log-likelihood over a batch. Passing an rng
    /// turns on dropout.
    pub fn batch_loss(
        &self,
        tape: &mut Tape<'_, T>,
        batch: &[(&PreparedGraph, &[usize])],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, usize)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut dropout = rng.map(|rng| Dropout {
            rate: self.config.dropout,
            rng,
        });
        let mut total = None;
        let mut tokens = 0;
        for (prepared, target) in batch {
            let encoded = self.encode(tape, prepared)?;
            let (nll, n) = self
                .decoder
                .sequence_loss(tape, &encoded, target, dropout.as_mut())?;
            tokens += n;
            total = Some(match total {
                None => nll,
                Some(acc) => tape.add(acc, nll)?,
            });
        }
        let total = total.expect("batch is non-empty");
        Ok((tape.scale(total, T::lit(1.0 / tokens as f64)), tokens))
    }

    pub fn beam_search(&self, prepared: &PreparedGraph, config: &DecoderConfig) -> Result<Hypothesis> {
        let mut tape = Tape::new(&self.params);
        let encoded = self.encode(&mut tape, prepared)?;
        self.decoder.beam_search(&mut tape, &encoded, config)
    }

    pub fn greedy(&self, prepared: &PreparedGraph, max_len: usize) -> Result<Hypothesis> {
        let mut tape = Tape::new(&self.params);
        let encoded = self.encode(&mut tape, prepared)?;
        self.decoder.greedy(&mut tape, &encoded, max_len)
    }

    /// Compares tape gradients of the teacher-forced loss on one example with
    /// central finite differences. Dropout is off.
    pub fn gradient_check(
        &mut self,
        prepared: &PreparedGraph,
        target: &[usize],
        cfg: &GradCheckConfig,
    ) -> Result<GradCheckReport> {
        let mut store = std::mem::take(&mut self.params);
        let this = &*self;
        let report = finite_difference_check(
            |tape| Ok::<_, Error>(this.batch_loss(tape, &[(prepared, target)], None)?.0),
            &mut store,
            cfg,
        );
        self.params = store;
        report
    }

    /// Beam search with the model's own decoder settings, returned as words.
    pub fn generate(&self, query: &SqlQuery) -> Result<Vec<String>> {
        let hyp = self.beam_search(&self.prepare(query), &self.config.decoder)?;
        Ok(self.tgt_vocab.decode(&hyp.tokens))
    }
}

/// Query used by [`gradient_check_fixture`]; its graph has three nodes
/// (select, aggregation, column).
pub const GRADCHECK_SQL: &str = "SELECT COUNT name";

/// Builds a small model around [`GRADCHECK_SQL`] and checks the gradient of
/// its teacher-forced loss at a random parameter point. Architecture
/// switches come from `config`; sizes are capped at 8. Differences are
/// taken on a 64-bit copy of the same parameters.
pub fn gradient_check_fixture<T: Real>(config: &ModelConfig, samples: usize, seed: u64) -> Result<GradCheckReport> {
    let query = crate::sql::parse(GRADCHECK_SQL)?;
    let target = ["how", "many", "name"];
    let nodes: Vec<String> = build_graph(&query).nodes().iter().flat_map(|n| n.text.clone()).collect();
    let src = Vocabulary::build(nodes.iter().map(String::as_str), 1, |_| false);
    let tgt = Vocabulary::build(target, 1, |_| false);
    let mut cfg = config.clone();
    cfg.word_dim = cfg.word_dim.min(6);
    cfg.encoder.hidden_dim = cfg.encoder.hidden_dim.min(4);
    cfg.decoder.hidden_size = cfg.decoder.hidden_size.min(8);
    let scale = cfg.init_scale;
    let mut model = Graph2Seq::<T>::new(cfg, src, tgt, seed)?;
    // zero biases put ReLUs fed by dead rows exactly on their kink
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for x in model.params.value_mut(id).data_mut() {
            *x = T::lit(rng.gen_range(-scale..=scale));
        }
    }
    let mut twin = Graph2Seq::<f64>::from_parts(
        model.config.clone(),
        model.src_vocab.clone(),
        model.tgt_vocab.clone(),
        model.params.cast(),
    )?;
    let prepared = model.prepare(&query);
    let ids = model.target_ids(&target);
    let batch = [(&prepared, ids.as_slice())];
    let mut reference = std::mem::take(&mut twin.params);
    finite_difference_check_against(
        |tape| Ok::<_, Error>(model.batch_loss(tape, &batch, None)?.0),
        &model.params,
        |tape| Ok::<_, Error>(twin.batch_loss(tape, &batch, None)?.0),
        &mut reference,
        &GradCheckConfig::reference(samples, seed),
    )
}
