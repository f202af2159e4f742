//! Composition proposers: sources of intermediate crystals `(Â, X̂, L̂)`.
//!
//! Three backends sit behind the [`Propose`] trait:
//!
//! * [`MarkovProposer`] — a token-level Markov chain over the text dialect,
//!   trained from a corpus and sampled autoregressively;
//! * [`FileProposer`] — replays records from a crystal record file;
//! * [`TemplateProposer`] — places a tabulated composition at random
//!   positions in a cubic cell.
//!
//! Every backend filters its raw draws through [`validate_proposal`] and, for
//! composition prompts, through a composition check, retrying up to
//! `max_attempts` times.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crystal::{self, Composition, Crystal};
use crate::elements;
use crate::linalg::{self, Mat3, Vec3};
use crate::rng;
use crate::text::{self, Prompt, Token, Vocab};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 16;

/// Context length in tokens; roughly one coordinate line plus its element.
pub const DEFAULT_MARKOV_ORDER: usize = 20;

/// Longest token sequence a Markov draw may produce before it is abandoned.
const MAX_SEQUENCE_TOKENS: usize = 8192;

#[derive(Debug, Error)]
pub enum ProposerError {
    #[error("no valid proposal after {attempts} attempts (last rejection: {last})")]
    ExhaustedAttempts { attempts: u32, last: String },
    #[error("proposer has not been trained")]
    UntrainedProposer,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid proposer configuration: {0}")]
    BadConfig(String),
    #[error("corrupt proposer state: {0}")]
    CorruptState(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a raw proposal was discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Rejection {
    UnknownElement(u32),
    EmptyStructure,
    DegenerateLattice,
    NonFiniteCoordinates,
    ShapeMismatch,
    Unparsable(String),
    CompositionMismatch { wanted: String, got: String },
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::UnknownElement(z) => write!(f, "unknown element Z={z}"),
            Rejection::EmptyStructure => write!(f, "no atoms"),
            Rejection::DegenerateLattice => write!(f, "degenerate lattice"),
            Rejection::NonFiniteCoordinates => write!(f, "non-finite coordinates"),
            Rejection::ShapeMismatch => write!(f, "atom/coordinate count mismatch"),
            Rejection::Unparsable(m) => write!(f, "unparsable text: {m}"),
            Rejection::CompositionMismatch { wanted, got } => {
                write!(f, "composition {got} does not match {wanted}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Accepted,
    Rejected(Rejection),
}

/// Proposal-shaped record before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawProposal {
    pub atom_types: Vec<u32>,
    pub frac_coords: Vec<Vec3>,
    pub lattice: Mat3,
}

/// Total validity check applied to every raw draw.
pub fn validate_proposal(p: &RawProposal) -> Verdict {
    use Verdict::Rejected;
    if p.atom_types.is_empty() {
        return Rejected(Rejection::EmptyStructure);
    }
    if p.atom_types.len() != p.frac_coords.len() {
        return Rejected(Rejection::ShapeMismatch);
    }
    if let Some(&z) = p.atom_types.iter().find(|&&z| !elements::is_valid_z(z)) {
        return Rejected(Rejection::UnknownElement(z));
    }
    if !p.frac_coords.iter().flatten().all(|v| v.is_finite()) {
        return Rejected(Rejection::NonFiniteCoordinates);
    }
    if crystal::params_from_lattice(&p.lattice).is_err() {
        return Rejected(Rejection::DegenerateLattice);
    }
    Verdict::Accepted
}

/// A validated intermediate crystal plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub crystal: Crystal,
    pub source: String,
    pub prompt: Prompt,
    /// Number of raw draws consumed, including the accepted one.
    pub attempts: u32,
}

impl Proposal {
    pub fn atom_types(&self) -> &[u8] {
        self.crystal.atom_types()
    }

    pub fn frac_coords(&self) -> &[Vec3] {
        self.crystal.frac_coords()
    }

    pub fn lattice(&self) -> &Mat3 {
        self.crystal.lattice()
    }
}

/// Canonical reduced formula of a proposal.
pub fn composition_of(p: &Proposal) -> String {
    p.crystal.composition().reduced_formula()
}

fn accept(raw: RawProposal, prompt: &Prompt) -> Result<Crystal, Rejection> {
    if let Verdict::Rejected(r) = validate_proposal(&raw) {
        return Err(r);
    }
    let c = Crystal::try_from(crystal::CrystalRecord {
        atom_types: raw.atom_types,
        frac_coords: raw.frac_coords,
        lattice: raw.lattice,
    })
    .map_err(|_| Rejection::DegenerateLattice)?;
    if let Some(target) = prompt.target_composition() {
        let (want, got) = (target.reduced_formula(), c.composition().reduced_formula());
        if want != got {
            return Err(Rejection::CompositionMismatch { wanted: want, got });
        }
    }
    Ok(c)
}

/// Anything that can turn a prompt and a seed into a proposal.
pub trait Propose: Sync {
    fn id(&self) -> String;

    fn max_attempts(&self) -> u32;

    /// One raw draw; failures to produce anything proposal-shaped surface
    /// as rejections.
    fn draw(&self, prompt: &Prompt, rng: &mut ChaCha8Rng) -> Result<RawProposal, Rejection>;

    /// Checked before any draw.
    fn ready(&self) -> Result<(), ProposerError> {
        Ok(())
    }

    /// Draws until a proposal validates, at most `max_attempts` times.
    /// Deterministic given `seed`.
    fn propose(&self, prompt: &Prompt, seed: u64) -> Result<Proposal, ProposerError> {
        self.ready()?;
        let mut rng = rng::stream(seed, &[]);
        let mut last = String::from("none");
        let max = self.max_attempts();
        for attempt in 1..=max {
            match self.draw(prompt, &mut rng).and_then(|raw| accept(raw, prompt)) {
                Ok(crystal) => {
                    return Ok(Proposal {
                        crystal,
                        source: self.id(),
                        prompt: prompt.clone(),
                        attempts: attempt,
                    })
                }
                Err(r) => last = r.to_string(),
            }
        }
        Err(ProposerError::ExhaustedAttempts {
            attempts: max,
            last,
        })
    }
}

/// Replays crystals from a record file.
#[derive(Debug, Clone)]
pub struct FileProposer {
    records: Vec<Crystal>,
    max_attempts: u32,
    label: String,
}

impl FileProposer {
    pub fn new(records: Vec<Crystal>, max_attempts: u32, label: impl Into<String>) -> Result<Self, ProposerError> {
        if records.is_empty() {
            return Err(ProposerError::EmptyCorpus);
        }
        if max_attempts == 0 {
            return Err(ProposerError::BadConfig("max_attempts must be >= 1".into()));
        }
        Ok(Self {
            records,
            max_attempts,
            label: label.into(),
        })
    }
}

impl Propose for FileProposer {
    fn id(&self) -> String {
        format!("file:{}", self.label)
    }

    fn max_attempts(&self) -> u32 {
        self.max_attempts
    }

    fn draw(&self, prompt: &Prompt, rng: &mut ChaCha8Rng) -> Result<RawProposal, Rejection> {
        // Composition prompts draw among matching records only.
        let pool: Vec<&Crystal> = match prompt.target_composition() {
            Some(target) => {
                let want = target.reduced_formula();
                let matching: Vec<&Crystal> = self
                    .records
                    .iter()
                    .filter(|c| c.composition().reduced_formula() == want)
                    .collect();
                if matching.is_empty() {
                    return Err(Rejection::CompositionMismatch {
                        wanted: want,
                        got: "no matching record".into(),
                    });
                }
                matching
            }
            None => self.records.iter().collect(),
        };
        let rec = crystal::CrystalRecord::from(pool[rng.gen_range(0..pool.len())].clone());
        Ok(RawProposal {
            atom_types: rec.atom_types,
            frac_coords: rec.frac_coords,
            lattice: rec.lattice,
        })
    }
}

/// Random placement of a tabulated composition in a cubic cell.
#[derive(Debug, Clone)]
pub struct TemplateProposer {
    table: Vec<(Composition, f64)>,
    volume_per_atom: f64,
    max_attempts: u32,
}

impl TemplateProposer {
    /// `table` holds formulas with relative weights; composition prompts
    /// override the table.
    pub fn new(
        table: &[(String, f64)],
        volume_per_atom: f64,
        max_attempts: u32,
    ) -> Result<Self, ProposerError> {
        if max_attempts == 0 {
            return Err(ProposerError::BadConfig("max_attempts must be >= 1".into()));
        }
        if !(volume_per_atom > 0.0) {
            return Err(ProposerError::BadConfig("volume_per_atom must be positive".into()));
        }
        let table = table
            .iter()
            .map(|(f, w)| {
                if !(*w > 0.0) {
                    return Err(ProposerError::BadConfig(format!("weight for {f} must be positive")));
                }
                Composition::parse_formula(f)
                    .map(|c| (c, *w))
                    .map_err(|e| ProposerError::BadConfig(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            table,
            volume_per_atom,
            max_attempts,
        })
    }
}

impl Propose for TemplateProposer {
    fn id(&self) -> String {
        "template".into()
    }

    fn max_attempts(&self) -> u32 {
        self.max_attempts
    }

    fn draw(&self, prompt: &Prompt, rng: &mut ChaCha8Rng) -> Result<RawProposal, Rejection> {
        let comp = match prompt.target_composition() {
            Some(c) => c,
            None => {
                if self.table.is_empty() {
                    return Err(Rejection::EmptyStructure);
                }
                let total: f64 = self.table.iter().map(|(_, w)| w).sum();
                let mut u = rng.gen::<f64>() * total;
                let mut pick = &self.table[self.table.len() - 1].0;
                for (c, w) in &self.table {
                    if u < *w {
                        pick = c;
                        break;
                    }
                    u -= w;
                }
                pick.clone()
            }
        };
        let atom_types: Vec<u32> = comp
            .0
            .iter()
            .flat_map(|(&z, &n)| std::iter::repeat(z as u32).take(n as usize))
            .collect();
        let a = (self.volume_per_atom * atom_types.len() as f64).cbrt();
        let frac_coords = atom_types
            .iter()
            .map(|_| [rng.gen(), rng.gen(), rng.gen()])
            .collect();
        Ok(RawProposal {
            atom_types,
            frac_coords,
            lattice: linalg::scale(&linalg::IDENTITY, a),
        })
    }
}

/// Fixed-order token Markov chain over the text dialect.
///
/// Contexts seen in training sample from their raw next-token counts plus
/// `pseudo_count` per vocabulary entry; unseen contexts fall back to the
/// uniform distribution over emittable tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovProposer {
    order: usize,
    pseudo_count: f64,
    max_attempts: u32,
    counts: HashMap<Vec<Token>, BTreeMap<Token, u32>>,
}

/// Tokens that may be emitted (everything except BOS).
fn emittable() -> impl Iterator<Item = Token> {
    (0..Vocab::size() as Token).filter(|&t| t != Vocab::BOS)
}

fn emittable_count() -> usize {
    Vocab::size() - 1
}

const SIDECAR_MAGIC: &[u8; 8] = b"CRYSMKV\0";
const SIDECAR_VERSION: u32 = 1;

impl MarkovProposer {
    pub fn untrained(order: usize, max_attempts: u32) -> Self {
        Self {
            order,
            pseudo_count: 0.0,
            max_attempts,
            counts: HashMap::new(),
        }
    }

    /// Counts next-token frequencies over all contexts of length `order`.
    /// Each sequence is left-padded with BOS so the first tokens have full contexts.
    pub fn train(corpus: &[Vec<Token>], order: usize, max_attempts: u32) -> Result<Self, ProposerError> {
        if order == 0 {
            return Err(ProposerError::BadConfig("order must be >= 1".into()));
        }
        if max_attempts == 0 {
            return Err(ProposerError::BadConfig("max_attempts must be >= 1".into()));
        }
        if corpus.is_empty() || corpus.iter().all(|s| s.len() < 2) {
            return Err(ProposerError::EmptyCorpus);
        }
        let mut counts: HashMap<Vec<Token>, BTreeMap<Token, u32>> = HashMap::new();
        for seq in corpus {
            let body: &[Token] = if seq.first() == Some(&Vocab::BOS) {
                &seq[1..]
            } else {
                seq
            };
            let mut padded = vec![Vocab::BOS; order];
            padded.extend_from_slice(body);
            for i in order..padded.len() {
                let ctx = padded[i - order..i].to_vec();
                *counts.entry(ctx).or_default().entry(padded[i]).or_insert(0) += 1;
            }
        }
        Ok(Self {
            order,
            pseudo_count: 0.0,
            max_attempts,
            counts,
        })
    }

    /// Trains on crystals by serializing and tokenizing them.
    pub fn train_on_crystals(crystals: &[Crystal], order: usize, max_attempts: u32) -> Result<Self, ProposerError> {
        let corpus: Vec<Vec<Token>> = crystals
            .iter()
            .map(|c| text::tokenize(&text::serialize(c)).expect("serialized text tokenizes"))
            .collect();
        Self::train(&corpus, order, max_attempts)
    }

    /// Adds a pseudo-count to every token in seen contexts (1.0 is add-one).
    pub fn with_pseudo_count(mut self, pseudo_count: f64) -> Self {
        self.pseudo_count = pseudo_count.max(0.0);
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_contexts(&self) -> usize {
        self.counts.len()
    }

    /// Samples the next token for a context.
    pub fn next_token(&self, context: &[Token], rng: &mut impl Rng) -> Token {
        let uniform = |rng: &mut dyn rand::RngCore| {
            let k = rng.gen_range(0..emittable_count());
            emittable().nth(k).expect("in range")
        };
        let Some(row) = self.counts.get(context) else {
            return uniform(rng);
        };
        let observed: u32 = row.values().sum();
        let total = observed as f64 + self.pseudo_count * emittable_count() as f64;
        let mut u = rng.gen::<f64>() * total;
        if self.pseudo_count == 0.0 {
            for (&tok, &n) in row {
                if u < n as f64 {
                    return tok;
                }
                u -= n as f64;
            }
            return *row.keys().next_back().expect("non-empty row");
        }
        for tok in emittable() {
            let w = row.get(&tok).copied().unwrap_or(0) as f64 + self.pseudo_count;
            if u < w {
                return tok;
            }
            u -= w;
        }
        Vocab::EOS
    }

    /// Generates one token sequence (BOS ... EOS). Returns `None` when the
    /// length cap is hit before EOS.
    pub fn generate(&self, rng: &mut impl Rng) -> Option<Vec<Token>> {
        let mut seq = vec![Vocab::BOS; self.order];
        while seq.len() < MAX_SEQUENCE_TOKENS + self.order {
            let ctx = &seq[seq.len() - self.order..];
            let t = self.next_token(ctx, rng);
            seq.push(t);
            if t == Vocab::EOS {
                let mut out = vec![Vocab::BOS];
                out.extend_from_slice(&seq[self.order..]);
                return Some(out);
            }
        }
        None
    }

    /// Writes the versioned binary sidecar.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(SIDECAR_MAGIC)?;
        w.write_all(&SIDECAR_VERSION.to_le_bytes())?;
        w.write_all(&(self.order as u32).to_le_bytes())?;
        w.write_all(&(Vocab::size() as u32).to_le_bytes())?;
        w.write_all(&self.max_attempts.to_le_bytes())?;
        w.write_all(&self.pseudo_count.to_le_bytes())?;
        let mut keys: Vec<&Vec<Token>> = self.counts.keys().collect();
        keys.sort();
        w.write_all(&(keys.len() as u64).to_le_bytes())?;
        for k in keys {
            for t in k {
                w.write_all(&t.to_le_bytes())?;
            }
            let row = &self.counts[k];
            w.write_all(&(row.len() as u32).to_le_bytes())?;
            for (t, n) in row {
                w.write_all(&t.to_le_bytes())?;
                w.write_all(&n.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, ProposerError> {
        fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], ProposerError> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)
                .map_err(|e| ProposerError::CorruptState(e.to_string()))?;
            Ok(b)
        }
        let corrupt = |m: &str| ProposerError::CorruptState(m.to_string());
        if &take::<8>(r)? != SIDECAR_MAGIC {
            return Err(corrupt("bad magic"));
        }
        if u32::from_le_bytes(take(r)?) != SIDECAR_VERSION {
            return Err(corrupt("unsupported version"));
        }
        let order = u32::from_le_bytes(take(r)?) as usize;
        if u32::from_le_bytes(take(r)?) as usize != Vocab::size() {
            return Err(corrupt("vocabulary size mismatch"));
        }
        let max_attempts = u32::from_le_bytes(take(r)?);
        let pseudo_count = f64::from_le_bytes(take(r)?);
        let n_ctx = u64::from_le_bytes(take(r)?);
        if order == 0 || max_attempts == 0 {
            return Err(corrupt("invalid header"));
        }
        let mut counts = HashMap::new();
        for _ in 0..n_ctx {
            let mut ctx = Vec::with_capacity(order);
            for _ in 0..order {
                ctx.push(Token::from_le_bytes(take(r)?));
            }
            let n = u32::from_le_bytes(take(r)?);
            let mut row = BTreeMap::new();
            for _ in 0..n {
                let t = Token::from_le_bytes(take(r)?);
                if t as usize >= Vocab::size() {
                    return Err(corrupt("token out of range"));
                }
                row.insert(t, u32::from_le_bytes(take(r)?));
            }
            counts.insert(ctx, row);
        }
        Ok(Self {
            order,
            pseudo_count,
            max_attempts,
            counts,
        })
    }
}

impl Propose for MarkovProposer {
    fn id(&self) -> String {
        format!("markov:{}", self.order)
    }

    fn max_attempts(&self) -> u32 {
        self.max_attempts
    }

    fn draw(&self, _prompt: &Prompt, rng: &mut ChaCha8Rng) -> Result<RawProposal, Rejection> {
        let seq = self
            .generate(rng)
            .ok_or_else(|| Rejection::Unparsable("no EOS before length cap".into()))?;
        let txt = text::detokenize(&seq).map_err(|e| Rejection::Unparsable(e.to_string()))?;
        let c = text::parse(&txt).map_err(|e| match e {
            text::TextError::UnknownElement(s) => {
                Rejection::Unparsable(format!("unknown element {s}"))
            }
            text::TextError::EmptyStructure => Rejection::EmptyStructure,
            text::TextError::DegenerateLattice(_) => Rejection::DegenerateLattice,
            other => Rejection::Unparsable(other.to_string()),
        })?;
        let rec = crystal::CrystalRecord::from(c);
        Ok(RawProposal {
            atom_types: rec.atom_types,
            frac_coords: rec.frac_coords,
            lattice: rec.lattice,
        })
    }

    fn ready(&self) -> Result<(), ProposerError> {
        if self.counts.is_empty() {
            return Err(ProposerError::UntrainedProposer);
        }
        Ok(())
    }
}

/// Declarative proposer selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposerKind {
    Markov { order: usize },
    File { path: String },
    Template { compositions: Vec<(String, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerConfig {
    pub kind: ProposerKind,
    pub seed: u64,
    pub max_attempts: u32,
}

impl ProposerConfig {
    pub fn validate(&self) -> Result<(), ProposerError> {
        if self.max_attempts == 0 {
            return Err(ProposerError::BadConfig("max_attempts must be >= 1".into()));
        }
        if let ProposerKind::Markov { order: 0 } = self.kind {
            return Err(ProposerError::BadConfig("order must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{build_prompt, PromptKind};

    fn nacl() -> Crystal {
        Crystal::new(
            vec![11, 17],
            vec![[0.0; 3], [0.5; 3]],
            linalg::scale(&linalg::IDENTITY, 5.6),
        )
        .unwrap()
    }

    fn perovskite(a: f64, sites: [u8; 3]) -> Crystal {
        Crystal::new(
            vec![sites[0], sites[1], sites[2], sites[2], sites[2]],
            vec![
                [0.0, 0.0, 0.0],
                [0.5, 0.5, 0.5],
                [0.5, 0.5, 0.0],
                [0.5, 0.0, 0.5],
                [0.0, 0.5, 0.5],
            ],
            linalg::scale(&linalg::IDENTITY, a),
        )
        .unwrap()
    }

    fn unconditional() -> Prompt {
        build_prompt(PromptKind::Unconditional).unwrap()
    }

    #[test]
    fn file_proposer_passthrough_and_determinism() {
        let p = FileProposer::new(vec![nacl()], 16, "one").unwrap();
        let a = p.propose(&unconditional(), 3).unwrap();
        assert_eq!(a.crystal, nacl());
        assert_eq!(a.attempts, 1);
        assert_eq!(a, p.propose(&unconditional(), 3).unwrap());
    }

    #[test]
    fn file_proposer_respects_composition_prompt() {
        let p = FileProposer::new(vec![nacl(), perovskite(3.9, [38, 22, 8])], 4, "two").unwrap();
        let prompt = build_prompt(PromptKind::Composition("NaCl".into())).unwrap();
        for seed in 0..20 {
            assert_eq!(composition_of(&p.propose(&prompt, seed).unwrap()), "ClNa");
        }
        let missing = build_prompt(PromptKind::Composition("KBr".into())).unwrap();
        assert!(matches!(
            p.propose(&missing, 0),
            Err(ProposerError::ExhaustedAttempts { attempts: 4, .. })
        ));
    }

    #[test]
    fn validation_verdicts() {
        let ok = RawProposal {
            atom_types: vec![11, 17],
            frac_coords: vec![[0.0; 3], [0.5; 3]],
            lattice: linalg::scale(&linalg::IDENTITY, 5.6),
        };
        assert_eq!(validate_proposal(&ok), Verdict::Accepted);
        let mut flat = ok.clone();
        flat.lattice[2] = [0.0; 3];
        assert_eq!(
            validate_proposal(&flat),
            Verdict::Rejected(Rejection::DegenerateLattice)
        );
        let mut alien = ok.clone();
        alien.atom_types[0] = 120;
        assert_eq!(
            validate_proposal(&alien),
            Verdict::Rejected(Rejection::UnknownElement(120))
        );
        let mut empty = ok.clone();
        empty.atom_types.clear();
        empty.frac_coords.clear();
        assert_eq!(
            validate_proposal(&empty),
            Verdict::Rejected(Rejection::EmptyStructure)
        );
        let mut nan = ok;
        nan.frac_coords[1][2] = f64::NAN;
        assert_eq!(
            validate_proposal(&nan),
            Verdict::Rejected(Rejection::NonFiniteCoordinates)
        );
    }

    #[test]
    fn composition_canonicalization() {
        let mk = |atoms: Vec<u8>| Proposal {
            crystal: Crystal::new(
                atoms.clone(),
                atoms.iter().enumerate().map(|(i, _)| [i as f64 * 0.1; 3]).collect(),
                linalg::scale(&linalg::IDENTITY, 5.0),
            )
            .unwrap(),
            source: "test".into(),
            prompt: unconditional(),
            attempts: 1,
        };
        assert_eq!(composition_of(&mk(vec![11, 17])), "ClNa");
        assert_eq!(composition_of(&mk(vec![8, 8, 22])), "O2Ti");
        assert_eq!(composition_of(&mk(vec![14, 14, 8, 8, 8, 8])), "O2Si");
    }

    #[test]
    fn markov_memorizes_single_sequence() {
        let c = perovskite(3.9, [38, 22, 8]);
        let seq = text::tokenize(&text::serialize(&c)).unwrap();
        let m = MarkovProposer::train(&[seq.clone()], seq.len(), 16).unwrap();
        let mut r = rng::stream(5, &[]);
        for _ in 0..20 {
            assert_eq!(m.generate(&mut r).unwrap(), seq);
        }
        let p = m.propose(&unconditional(), 9).unwrap();
        assert_eq!(text::serialize(&p.crystal), text::serialize(&c));
    }

    #[test]
    fn unseen_context_is_uniform() {
        let m = MarkovProposer::train(&[vec![Vocab::BOS, Vocab::DOT, Vocab::EOS]], 2, 16).unwrap();
        let unseen = [Vocab::DIGIT0, Vocab::DIGIT0 + 1];
        let mut r = rng::stream(1, &[]);
        let n = 230_000;
        let mut hist = vec![0usize; Vocab::size()];
        for _ in 0..n {
            hist[m.next_token(&unseen, &mut r) as usize] += 1;
        }
        assert_eq!(hist[Vocab::BOS as usize], 0);
        let expect = n as f64 / emittable_count() as f64;
        for t in emittable() {
            let dev = (hist[t as usize] as f64 - expect).abs() / expect;
            assert!(dev < 0.2, "token {t} count {} vs {expect}", hist[t as usize]);
        }
    }

    #[test]
    fn add_one_smoothing_spreads_mass() {
        let m = MarkovProposer::train(&[vec![Vocab::BOS, Vocab::DOT, Vocab::EOS]], 1, 16)
            .unwrap()
            .with_pseudo_count(1.0);
        let mut r = rng::stream(2, &[]);
        let n = 50_000;
        let dots = (0..n)
            .filter(|_| m.next_token(&[Vocab::BOS], &mut r) == Vocab::DOT)
            .count();
        // (1 + 1) / (1 + |V|)
        let expect = 2.0 / (1.0 + emittable_count() as f64);
        assert!((dots as f64 / n as f64 - expect).abs() < 0.005);
    }

    #[test]
    fn markov_unigram_frequencies_match_corpus() {
        let corpus: Vec<Crystal> = [
            perovskite(3.9, [38, 22, 8]),
            perovskite(4.1, [56, 40, 8]),
            perovskite(3.8, [20, 22, 8]),
        ]
        .into_iter()
        .collect();
        let seqs: Vec<Vec<Token>> = corpus
            .iter()
            .map(|c| text::tokenize(&text::serialize(c)).unwrap())
            .collect();
        let mut corpus_freq = vec![0f64; Vocab::size()];
        let mut corpus_total = 0.0;
        for s in &seqs {
            for &t in &s[1..] {
                corpus_freq[t as usize] += 1.0;
                corpus_total += 1.0;
            }
        }
        let m = MarkovProposer::train(&seqs, 4, 16).unwrap();
        let mut r = rng::stream(3, &[]);
        let mut gen_freq = vec![0f64; Vocab::size()];
        let mut gen_total = 0.0;
        while gen_total < 1e5 {
            let s = m.generate(&mut r).unwrap();
            for &t in &s[1..] {
                gen_freq[t as usize] += 1.0;
                gen_total += 1.0;
            }
        }
        for t in 0..Vocab::size() {
            let a = corpus_freq[t] / corpus_total;
            let b = gen_freq[t] / gen_total;
            assert!((a - b).abs() < 0.02, "token {t}: corpus {a} generated {b}");
        }
    }

    #[test]
    fn markov_emits_only_whitelisted_elements() {
        let corpus = [
            perovskite(3.9, [38, 22, 8]),
            perovskite(4.1, [56, 40, 8]),
            nacl(),
        ];
        let m = MarkovProposer::train_on_crystals(&corpus, 12, 16).unwrap();
        let allowed: std::collections::BTreeSet<u8> = [38, 22, 8, 56, 40, 11, 17].into();
        let prompt = unconditional();
        let mut accepted = 0;
        for seed in 0..1000 {
            let Ok(p) = m.propose(&prompt, seed) else { continue };
            accepted += 1;
            assert!(p.atom_types().iter().all(|z| allowed.contains(z)));
            // closure: every accepted proposal survives another text round trip
            text::parse(&text::serialize(&p.crystal)).unwrap();
        }
        assert!(accepted > 900, "{accepted} of 1000 accepted");
    }

    #[test]
    fn markov_errors() {
        assert!(matches!(
            MarkovProposer::train(&[], 3, 16),
            Err(ProposerError::EmptyCorpus)
        ));
        assert!(matches!(
            MarkovProposer::train(&[vec![0, 4, 1]], 0, 16),
            Err(ProposerError::BadConfig(_))
        ));
        assert!(matches!(
            MarkovProposer::untrained(3, 16).propose(&unconditional(), 0),
            Err(ProposerError::UntrainedProposer)
        ));
    }

    #[test]
    fn sidecar_roundtrip() {
        let m = MarkovProposer::train_on_crystals(&[nacl(), perovskite(3.9, [38, 22, 8])], 5, 7)
            .unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = MarkovProposer::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
        buf[0] = b'X';
        assert!(matches!(
            MarkovProposer::read_from(&mut buf.as_slice()),
            Err(ProposerError::CorruptState(_))
        ));
    }

    #[test]
    fn template_proposer_places_composition() {
        let t = TemplateProposer::new(&[("SrTiO3".into(), 1.0), ("NaCl".into(), 3.0)], 12.0, 4)
            .unwrap();
        let p = t.propose(&unconditional(), 1).unwrap();
        assert!(["O3SrTi", "ClNa"].contains(&composition_of(&p).as_str()));
        let forced = build_prompt(PromptKind::Composition("KBr".into())).unwrap();
        let p = t.propose(&forced, 2).unwrap();
        assert_eq!(composition_of(&p), "BrK");
        assert!((p.crystal.volume() - 24.0).abs() < 1e-9);
    }
}
