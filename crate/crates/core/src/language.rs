//! Query encoder-decoder that mines `N_e` neck features per sentence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::{Archive, Checkpoint, RngState, TensorDtype};
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::config::Config;
use crate::data::{EmbeddingTable, QueryTokens};
use crate::error::{Error, Result};
use crate::nn::{restore_tensors, store_tensors, uniform_init, Linear, Lstm2, Mlp2};
use crate::optim::Adam;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LanguageDims {
    pub vocab: usize,
    pub word_dim: usize,
    pub sentence_dim: usize,
    pub necks: usize,
    pub neck_dim: usize,
    pub mlp_hidden: usize,
    pub max_len: usize,
}

impl LanguageDims {
    pub fn new(cfg: &Config, table: &EmbeddingTable) -> Self {
        Self {
            vocab: table.vocab_size(),
            word_dim: table.dim(),
            sentence_dim: cfg.sentence_dim,
            necks: cfg.necks,
            neck_dim: cfg.neck_dim,
            mlp_hidden: cfg.mlp_hidden,
            max_len: cfg.max_query_len,
        }
    }
}

pub struct LanguageModel {
    pub store: ParamStore,
    pub dims: LanguageDims,
    encoder: Lstm2,
    neck_maps: Vec<Mlp2>,
    merge_maps: Vec<Mlp2>,
    merge: Linear,
    decoder: Lstm2,
    start: ParamId,
    head: Linear,
}

/// Graph handles of one batched forward pass.
pub struct Forward {
    /// `B × d_r`
    pub r_e: Var,
    /// One `B × d_e` block per neck index.
    pub necks: Vec<Var>,
    /// `B × d_r`
    pub r_o: Var,
    /// One `B × N_w` block per decoded position.
    pub logits: Vec<Var>,
}

/// Batch sums of the loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<T> {
    pub cel: T,
    pub mse: T,
    pub dqa: T,
    pub total: T,
}

impl LanguageModel {
    pub fn new(dims: LanguageDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = dims;
        let encoder = Lstm2::new(&mut store, "enc", d.word_dim, d.sentence_dim, &mut rng);
        let neck_maps = (0..d.necks)
            .map(|i| Mlp2::new(&mut store, &format!("neck{i}"), d.sentence_dim, d.mlp_hidden, d.neck_dim, &mut rng))
            .collect();
        let merge_maps = (0..d.necks)
            .map(|i| Mlp2::new(&mut store, &format!("merge{i}"), d.neck_dim, d.mlp_hidden, d.neck_dim, &mut rng))
            .collect();
        let merge = Linear::new(&mut store, "merge", d.necks * d.neck_dim, d.sentence_dim, &mut rng);
        let decoder = Lstm2::new(&mut store, "dec", d.word_dim, d.sentence_dim, &mut rng);
        let start = store.add("start", uniform_init(&mut rng, 1, d.word_dim, d.word_dim));
        let head = Linear::new(&mut store, "head", d.sentence_dim, d.vocab, &mut rng);
        Self {
            store,
            dims,
            encoder,
            neck_maps,
            merge_maps,
            merge,
            decoder,
            start,
            head,
        }
    }

    /// Zeroes every neck perceptron, leaving `E` equal to the output biases.
    pub fn zero_neck_maps(&mut self) {
        for m in &self.neck_maps {
            m.first.zero(&mut self.store);
            m.second.zero(&mut self.store);
        }
    }

    pub fn neck_output_bias(&self, neck: usize) -> &Matrix {
        self.store.get(self.neck_maps[neck].second.b)
    }

    pub fn zero_merge_biases(&mut self) {
        for m in &self.merge_maps {
            self.store.get_mut(m.first.b).as_mut_slice().fill(0.0);
            self.store.get_mut(m.second.b).as_mut_slice().fill(0.0);
        }
        self.store.get_mut(self.merge.b).as_mut_slice().fill(0.0);
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Empty("query has no tokens".into()));
        }
        if tokens.len() > self.dims.max_len {
            return Err(Error::InvalidArgument(format!(
                "query length {} exceeds {}",
                tokens.len(),
                self.dims.max_len
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.dims.vocab) {
            return Err(Error::InvalidArgument(format!("token index {t} out of vocabulary")));
        }
        Ok(())
    }

    fn embed_step(table: &EmbeddingTable, batch: &[&[usize]], t: usize) -> Matrix {
        let mut m = Matrix::zeros(batch.len(), table.dim());
        for (b, toks) in batch.iter().enumerate() {
            let idx = toks.get(t).copied().unwrap_or(table.pad());
            m.row_mut(b).copy_from_slice(table.vector(idx));
        }
        m
    }

    /// Encoder plus neck maps. Sequences shorter than the longest in the batch
    /// stop updating once their tokens run out.
    pub fn encode_graph(&self, g: &mut Graph<'_>, table: &EmbeddingTable, batch: &[&[usize]]) -> (Var, Vec<Var>) {
        let longest = batch.iter().map(|t| t.len()).max().unwrap_or(0);
        let uniform = batch.iter().all(|t| t.len() == longest);
        let mut state = self.encoder.zero_state(g, batch.len());
        for t in 0..longest {
            let x = g.constant(Self::embed_step(table, batch, t));
            let mask = (!uniform).then(|| {
                let m = Matrix::from_fn(batch.len(), 1, |b, _| if t < batch[b].len() { 1.0 } else { 0.0 });
                g.constant(m)
            });
            state = self.encoder.step(g, x, state, mask);
        }
        let r_e = state[1].0;
        let necks = self.neck_maps.iter().map(|m| m.forward(g, r_e)).collect();
        (r_e, necks)
    }

    /// Aggregates necks into `r_o`.
    pub fn merge_graph(&self, g: &mut Graph<'_>, necks: &[Var]) -> Var {
        let parts: Vec<Var> = self
            .merge_maps
            .iter()
            .zip(necks)
            .map(|(m, &n)| m.forward(g, n))
            .collect();
        let cat = g.concat_cols(&parts);
        self.merge.forward(g, cat)
    }

    /// Unrolls the decoder from `r_o`. With `teacher`, position `t > 0` is fed
    /// the true token `t − 1`; otherwise the previous argmax.
    pub fn decode_graph(
        &self,
        g: &mut Graph<'_>,
        table: &EmbeddingTable,
        r_o: Var,
        batch_size: usize,
        steps: usize,
        teacher: Option<&[&[usize]]>,
    ) -> Vec<Var> {
        let zeros = g.constant(Matrix::zeros(batch_size, self.dims.sentence_dim));
        let mut state = [(r_o, zeros), (r_o, zeros)];
        let start = g.param(self.start);
        let blank = g.constant(Matrix::zeros(batch_size, self.dims.word_dim));
        let mut x = g.add_row(blank, start);
        let mut logits = Vec::with_capacity(steps);
        for t in 0..steps {
            state = self.decoder.step(g, x, state, None);
            let p = self.head.forward(g, state[1].0);
            logits.push(p);
            if t + 1 < steps {
                let next = match teacher {
                    Some(batch) => Self::embed_step(table, batch, t),
                    None => {
                        let pm = g.value(p);
                        let picks: Vec<usize> = (0..batch_size).map(|b| argmax(pm.row(b))).collect();
                        let refs: Vec<&[usize]> = picks.iter().map(std::slice::from_ref).collect();
                        Self::embed_step(table, &refs, 0)
                    }
                };
                x = g.constant(next);
            }
        }
        logits
    }

    /// Teacher-forced pass over a batch.
    pub fn forward(&self, g: &mut Graph<'_>, table: &EmbeddingTable, batch: &[&[usize]]) -> Forward {
        let (r_e, necks) = self.encode_graph(g, table, batch);
        let r_o = self.merge_graph(g, &necks);
        let longest = batch.iter().map(|t| t.len()).max().unwrap_or(0);
        let logits = self.decode_graph(g, table, r_o, batch.len(), longest, Some(batch));
        Forward {
            r_e,
            necks,
            r_o,
            logits,
        }
    }

    /// Summed per-query losses over a batch.
    pub fn batch_loss(&self, g: &mut Graph<'_>, fwd: &Forward, batch: &[&[usize]], cfg: &Config) -> LossParts<Var> {
        let cel = cel_graph(g, &fwd.logits, batch);
        let mse = mse_graph(g, fwd.r_e, fwd.r_o);
        let mut dqa_terms = Vec::with_capacity(batch.len());
        for b in 0..batch.len() {
            let rows: Vec<Var> = fwd.necks.iter().map(|&n| g.slice_rows(n, b, 1)).collect();
            let e = g.concat_rows(&rows);
            dqa_terms.push(dqa_graph(g, e, cfg.lambda));
        }
        let dqa_cat = g.concat_rows(&dqa_terms);
        let dqa = g.sum(dqa_cat);
        let total = weighted_sum(g, cel, mse, dqa, cfg.alpha_w, cfg.beta_w);
        LossParts { cel, mse, dqa, total }
    }

    /// `(r_e, E)` for one query.
    pub fn encode_query(&self, tokens: &QueryTokens, table: &EmbeddingTable) -> Result<(Vec<f64>, Matrix)> {
        self.check_tokens(&tokens.tokens)?;
        let mut g = Graph::new(&self.store);
        let (r_e, necks) = self.encode_graph(&mut g, table, &[&tokens.tokens]);
        let rows: Vec<&Matrix> = necks.iter().map(|&n| g.value(n)).collect();
        Ok((g.value(r_e).as_slice().to_vec(), Matrix::vconcat(&rows)))
    }

    fn necks_as_batch(&self, g: &mut Graph<'_>, e: &Matrix) -> Result<Vec<Var>> {
        if e.shape() != (self.dims.necks, self.dims.neck_dim) {
            return Err(Error::Shape(format!(
                "neck matrix is {:?}, expected {:?}",
                e.shape(),
                (self.dims.necks, self.dims.neck_dim)
            )));
        }
        Ok((0..e.rows()).map(|i| g.constant(e.row_matrix(i))).collect())
    }

    /// `(r_o, P)` with greedy decoding over `L_max` positions.
    pub fn decode_necks(&self, e: &Matrix, table: &EmbeddingTable) -> Result<(Vec<f64>, Matrix)> {
        let mut g = Graph::new(&self.store);
        let necks = self.necks_as_batch(&mut g, e)?;
        let r_o = self.merge_graph(&mut g, &necks);
        let logits = self.decode_graph(&mut g, table, r_o, 1, self.dims.max_len, None);
        let rows: Vec<&Matrix> = logits.iter().map(|&p| g.value(p)).collect();
        Ok((g.value(r_o).as_slice().to_vec(), Matrix::vconcat(&rows)))
    }

    /// Greedy reconstruction of a query, cut at its true length.
    pub fn reconstruct(&self, tokens: &QueryTokens, table: &EmbeddingTable) -> Result<Vec<usize>> {
        let (_, e) = self.encode_query(tokens, table)?;
        let (_, p) = self.decode_necks(&e, table)?;
        Ok((0..tokens.len()).map(|t| argmax(p.row(t))).collect())
    }

    /// Per-query mean loss parts over a corpus, evaluated in batches.
    pub fn evaluate(&self, corpus: &[QueryTokens], table: &EmbeddingTable, cfg: &Config) -> LossParts<f64> {
        let mut acc = LossParts {
            cel: 0.0,
            mse: 0.0,
            dqa: 0.0,
            total: 0.0,
        };
        for chunk in corpus.chunks(cfg.language_batch.max(1)) {
            let batch: Vec<&[usize]> = chunk.iter().map(|q| q.tokens.as_slice()).collect();
            let mut g = Graph::new(&self.store);
            let fwd = self.forward(&mut g, table, &batch);
            let l = self.batch_loss(&mut g, &fwd, &batch, cfg);
            acc.cel += g.scalar(l.cel);
            acc.mse += g.scalar(l.mse);
            acc.dqa += g.scalar(l.dqa);
            acc.total += g.scalar(l.total);
        }
        let n = corpus.len().max(1) as f64;
        LossParts {
            cel: acc.cel / n,
            mse: acc.mse / n,
            dqa: acc.dqa / n,
            total: acc.total / n,
        }
    }

    pub fn export_necks(&self, corpus: &[QueryTokens], table: &EmbeddingTable) -> Result<NeckSet> {
        let mut ids = Vec::with_capacity(corpus.len());
        let mut necks = Vec::with_capacity(corpus.len());
        for q in corpus {
            let (_, e) = self.encode_query(q, table)?;
            ids.push(q.query_id.clone());
            necks.push(e);
        }
        Ok(NeckSet { ids, necks })
    }

    pub fn to_checkpoint(&self, cfg: &Config, epoch: usize, rng: &ChaCha8Rng, opt: Option<&Adam>) -> Checkpoint {
        let mut tensors = store_tensors(&self.store, "lang.");
        if let Some(opt) = opt {
            tensors.extend(opt.to_tensors(&self.store, "adam."));
        }
        let extra = BTreeMap::from([
            ("model".to_string(), "language".to_string()),
            ("vocab".to_string(), self.dims.vocab.to_string()),
            ("word_dim".to_string(), self.dims.word_dim.to_string()),
        ]);
        Checkpoint {
            iteration: epoch,
            config: cfg.clone(),
            rng: RngState::capture(rng),
            tensors,
            extra,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            ckpt.extra
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks {k}")))
        };
        if ckpt.extra.get("model").map(String::as_str) != Some("language") {
            return Err(Error::InvalidArgument("not a language model checkpoint".into()));
        }
        let cfg = &ckpt.config;
        let dims = LanguageDims {
            vocab: get("vocab")?,
            word_dim: get("word_dim")?,
            sentence_dim: cfg.sentence_dim,
            necks: cfg.necks,
            neck_dim: cfg.neck_dim,
            mlp_hidden: cfg.mlp_hidden,
            max_len: cfg.max_query_len,
        };
        let mut model = Self::new(dims, cfg.seed);
        restore_tensors(&mut model.store, &ckpt.tensors, "lang.")?;
        Ok(model)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `−Σ_t log softmax(P_t)[truth_t]` over each sequence's true length.
pub fn cel_graph(g: &mut Graph<'_>, logits: &[Var], batch: &[&[usize]]) -> Var {
    let mut terms = Vec::new();
    for (t, &p) in logits.iter().enumerate() {
        let entries: Vec<(usize, usize)> = batch
            .iter()
            .enumerate()
            .filter_map(|(b, toks)| toks.get(t).map(|&w| (b, w)))
            .collect();
        if entries.is_empty() {
            continue;
        }
        let lp = g.log_softmax_rows(p);
        let picked = g.pick(lp, entries);
        terms.push(g.sum(picked));
    }
    let cat = g.concat_rows(&terms);
    let s = g.sum(cat);
    g.scale(s, -1.0)
}

/// Row-wise mean squared difference, summed over rows.
pub fn mse_graph(g: &mut Graph<'_>, a: Var, b: Var) -> Var {
    let d = g.shape(a).1 as f64;
    let diff = g.sub(a, b);
    let sq = g.square(diff);
    let s = g.sum(sq);
    g.scale(s, 1.0 / d)
}

/// `‖EᵀE − λI‖_F`
pub fn dqa_graph(g: &mut Graph<'_>, e: Var, lambda: f64) -> Var {
    let d = g.shape(e).1;
    let et = g.transpose(e);
    let gram = g.matmul(et, e);
    let li = g.constant(Matrix::identity(d).scale(lambda));
    let diff = g.sub(gram, li);
    let sq = g.square(diff);
    let s = g.sum(sq);
    g.sqrt(s)
}

pub fn weighted_sum(g: &mut Graph<'_>, first: Var, a: Var, b: Var, wa: f64, wb: f64) -> Var {
    let a = g.scale(a, wa);
    let b = g.scale(b, wb);
    let ab = g.add(a, b);
    g.add(first, ab)
}

fn eval_scalar(build: impl FnOnce(&mut Graph<'_>) -> Var) -> f64 {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let v = build(&mut g);
    g.scalar(v)
}

/// Cross-entropy of an `L' × N_w` score matrix against `tokens` (`L ≤ L'`).
pub fn loss_cel(p: &Matrix, tokens: &[usize]) -> Result<f64> {
    if tokens.is_empty() || tokens.len() > p.rows() {
        return Err(Error::Shape(format!("{} tokens for {} score rows", tokens.len(), p.rows())));
    }
    if tokens.iter().any(|&t| t >= p.cols()) {
        return Err(Error::Shape("token index exceeds score columns".into()));
    }
    Ok(eval_scalar(|g| {
        let rows: Vec<Var> = (0..tokens.len()).map(|t| g.constant(p.row_matrix(t))).collect();
        cel_graph(g, &rows, &[tokens])
    }))
}

pub fn loss_dqa(e: &Matrix, lambda: f64) -> f64 {
    eval_scalar(|g| {
        let v = g.constant(e.clone());
        dqa_graph(g, v, lambda)
    })
}

pub fn loss_mse(r_e: &[f64], r_o: &[f64]) -> Result<f64> {
    if r_e.len() != r_o.len() || r_e.is_empty() {
        return Err(Error::Shape(format!("dims {} and {}", r_e.len(), r_o.len())));
    }
    Ok(eval_scalar(|g| {
        let a = g.constant(Matrix::row_vector(r_e));
        let b = g.constant(Matrix::row_vector(r_o));
        mse_graph(g, a, b)
    }))
}

pub fn combine_language(cel: f64, mse: f64, dqa: f64, cfg: &Config) -> f64 {
    cel + cfg.alpha_w * mse + cfg.beta_w * dqa
}

pub fn loss_language(p: &Matrix, tokens: &[usize], e: &Matrix, r_e: &[f64], r_o: &[f64], cfg: &Config) -> Result<f64> {
    Ok(combine_language(
        loss_cel(p, tokens)?,
        loss_mse(r_e, r_o)?,
        loss_dqa(e, cfg.lambda),
        cfg,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub cel: f64,
    pub mse: f64,
    pub dqa: f64,
    pub total: f64,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("step,epoch,l_cel,l_mse,l_dqa,l_w\n");
    for r in trace {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.step, r.epoch, r.cel, r.mse, r.dqa, r.total);
    }
    s
}

pub struct LanguageTraining {
    pub model: LanguageModel,
    pub trace: Vec<TraceRow>,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
}

/// Adam over shuffled mini-batches for `cfg.language_epochs` epochs. Each
/// step minimizes the batch-mean `L_w`; the trace records per-query means.
pub fn train_language_model(corpus: &[QueryTokens], table: &EmbeddingTable, cfg: &Config) -> Result<LanguageTraining> {
    train_language_steps(corpus, table, cfg, cfg.language_epochs)
}

pub fn train_language_steps(
    corpus: &[QueryTokens],
    table: &EmbeddingTable,
    cfg: &Config,
    epochs: usize,
) -> Result<LanguageTraining> {
    if corpus.is_empty() {
        return Err(Error::Empty("query corpus".into()));
    }
    let mut model = LanguageModel::new(LanguageDims::new(cfg, table), cfg.seed);
    for q in corpus {
        model.check_tokens(&q.tokens)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(cfg.lr_language);
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut step = 0;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.language_batch.max(1)) {
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| corpus[i].tokens.as_slice()).collect();
            let (parts, grads) = {
                let mut g = Graph::new(&model.store);
                let fwd = model.forward(&mut g, table, &batch);
                let l = model.batch_loss(&mut g, &fwd, &batch, cfg);
                let mean = g.scale(l.total, 1.0 / batch.len() as f64);
                let parts = [g.scalar(l.cel), g.scalar(l.mse), g.scalar(l.dqa), g.scalar(l.total)];
                (parts, g.backward(mean))
            };
            let n = batch.len() as f64;
            if !parts.iter().all(|x| x.is_finite()) || !grads.is_finite() {
                let ids: Vec<&str> = chunk.iter().map(|&i| corpus[i].query_id.as_str()).collect();
                return Err(Error::Divergence(format!(
                    "language step {step} (epoch {epoch}), queries {}",
                    ids.join(",")
                )));
            }
            opt.step(&mut model.store, &grads);
            trace.push(TraceRow {
                step,
                epoch,
                cel: parts[0] / n,
                mse: parts[1] / n,
                dqa: parts[2] / n,
                total: parts[3] / n,
            });
            step += 1;
        }
        log::debug!(
            "language epoch {epoch}: L_w {:.4}",
            trace.last().map(|r| r.total).unwrap_or(f64::NAN)
        );
    }
    Ok(LanguageTraining {
        model,
        trace,
        optimizer: opt,
        rng,
    })
}

/// Neck matrices keyed by query id.
#[derive(Debug, Clone, PartialEq)]
pub struct NeckSet {
    pub ids: Vec<String>,
    pub necks: Vec<Matrix>,
}

impl NeckSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn neck_count(&self) -> usize {
        self.necks.first().map_or(0, Matrix::rows)
    }

    /// Row `q` holds the `i`-th neck of query `q`.
    pub fn neck_points(&self, i: usize) -> Matrix {
        let rows: Vec<Matrix> = self.necks.iter().map(|e| e.row_matrix(i)).collect();
        let refs: Vec<&Matrix> = rows.iter().collect();
        Matrix::vconcat(&refs)
    }

    pub fn get(&self, id: &str) -> Option<&Matrix> {
        self.ids.iter().position(|x| x == id).map(|k| &self.necks[k])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut a = Archive::new("necks");
        let order: Vec<String> = self.ids.clone();
        a.meta.insert("order".into(), order.join("\n"));
        for (id, e) in self.ids.iter().zip(&self.necks) {
            a.insert(id.clone(), TensorDtype::F64, e.clone());
        }
        a.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::load_kind(path, "necks")?;
        let ids: Vec<String> = a
            .meta_value("order")?
            .split('\n')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let necks = ids
            .iter()
            .map(|id| a.require(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ids, necks })
    }

    /// Long format: `query_id,neck,dim0,dim1,...`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let d = self.necks.first().map_or(0, Matrix::cols);
        s.push_str("query_id,neck");
        for k in 0..d {
            let _ = write!(s, ",d{k}");
        }
        s.push('\n');
        for (id, e) in self.ids.iter().zip(&self.necks) {
            for i in 0..e.rows() {
                let _ = write!(s, "{id},{i}");
                for &x in e.row(i) {
                    let _ = write!(s, ",{x}");
                }
                s.push('\n');
            }
        }
        s
    }
}
