//! Interaction data model, reward assignment, preprocessing, splitting, and
//! expansion of sequences into training examples.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense item index in `[0, catalog_size)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl ItemId {
    pub fn new(index: usize) -> Self {
        ItemId(index as u32)
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Kind of user feedback attached to an interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    Click,
    Purchase,
    /// Explicit rating on a 1..=5 scale.
    Rating(u8),
}

impl Event {
    /// Parses the `event_type` / `rating` columns of the interaction CSV.
    pub fn parse(event_type: &str, rating: Option<u8>) -> Result<Self> {
        match event_type.trim().to_ascii_lowercase().as_str() {
            "click" => Ok(Event::Click),
            "purchase" | "buy" | "addtocart" => Ok(Event::Purchase),
            "rating" => {
                let level = rating.ok_or_else(|| Error::invalid("rating event without a rating value"))?;
                if !(1..=5).contains(&level) {
                    return Err(Error::invalid(format!("rating {level} outside 1..=5")));
                }
                Ok(Event::Rating(level))
            }
            other => Err(Error::invalid(format!("unknown event type {other:?}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Event::Click => "click",
            Event::Purchase => "purchase",
            Event::Rating(_) => "rating",
        }
    }
}

/// Maps a 1..=5 rating onto the reward scale: {1,2} -> 0, 3 -> 0.5, {4,5} -> 1.
pub fn map_rating_to_reward(rating: u8) -> Result<f64> {
    match rating {
        1 | 2 => Ok(0.0),
        3 => Ok(0.5),
        4 | 5 => Ok(1.0),
        _ => Err(Error::invalid(format!("rating {rating} outside 1..=5"))),
    }
}

/// Rewards assigned to click and purchase events.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardMap {
    pub click: f64,
    pub purchase: f64,
}

impl Default for RewardMap {
    fn default() -> Self {
        RewardMap { click: 0.2, purchase: 1.0 }
    }
}

impl RewardMap {
    pub fn reward(&self, event: Event) -> Result<f64> {
        match event {
            Event::Click => Ok(self.click),
            Event::Purchase => Ok(self.purchase),
            Event::Rating(level) => map_rating_to_reward(level),
        }
    }
}

/// Reward for a click/purchase event under `map`. Rating events are rejected.
pub fn map_event_to_reward(event: Event, map: &RewardMap) -> Result<f64> {
    match event {
        Event::Click | Event::Purchase => map.reward(event),
        Event::Rating(_) => Err(Error::invalid("rating events are mapped with map_rating_to_reward")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub item: ItemId,
    pub event: Event,
    pub reward: f64,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSequence {
    pub id: String,
    pub interactions: Vec<Interaction>,
}

impl SessionSequence {
    pub fn items(&self) -> Vec<ItemId> {
        self.interactions.iter().map(|i| i.item).collect()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn count_events(&self, event: Event) -> usize {
        self.interactions.iter().filter(|i| i.event == event).count()
    }
}

/// One (context, action, reward) transition extracted from a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub context: Vec<ItemId>,
    pub action: ItemId,
    pub reward: f64,
    pub event: Event,
    pub next_context: Vec<ItemId>,
    pub terminal: bool,
    pub in_loss_window: bool,
    /// Discounted return from this position. Equals `reward` until
    /// [`crate::objectives::assign_reward_to_go`] is applied.
    pub return_to_go: f64,
    /// Index of the source sequence within its dataset.
    pub sequence: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<SessionSequence>,
    pub catalog_size: usize,
    /// Raw identifier of every dense item index.
    pub item_ids: Vec<String>,
    /// Split assignment, one per sequence.
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn sequences_in(&self, split: Split) -> impl Iterator<Item = (usize, &SessionSequence)> {
        self.sequences.iter().enumerate().filter(move |(i, _)| self.splits[*i] == split)
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let count = |s| self.splits.iter().filter(|&&x| x == s).count();
        (count(Split::Train), count(Split::Validation), count(Split::Test))
    }

    /// Expands every sequence of `split` into examples tagged with their
    /// sequence index.
    pub fn examples(&self, split: Split, loss_window: usize) -> Result<Vec<TrainingExample>> {
        let mut out = Vec::new();
        for (idx, seq) in self.sequences_in(split) {
            let mut ex = expand_examples(seq, loss_window)?;
            for e in &mut ex {
                e.sequence = idx;
            }
            out.extend(ex);
        }
        Ok(out)
    }

    /// Converts back to raw form, keeping the original item identifiers.
    pub fn to_raw(&self) -> Vec<RawSequence> {
        self.sequences
            .iter()
            .map(|s| RawSequence {
                id: s.id.clone(),
                interactions: s
                    .interactions
                    .iter()
                    .map(|i| RawInteraction {
                        item: self.item_ids[i.item.index()].clone(),
                        event: i.event,
                        timestamp: i.timestamp,
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn has_event(&self, event: Event) -> bool {
        self.sequences.iter().any(|s| s.interactions.iter().any(|i| i.event == event))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawInteraction {
    pub item: String,
    pub event: Event,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSequence {
    pub id: String,
    pub interactions: Vec<RawInteraction>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    session_id: String,
    timestamp: i64,
    item_id: String,
    event_type: String,
    #[serde(default)]
    rating: Option<u8>,
}

/// Reads the `session_id,timestamp,item_id,event_type,rating` interaction
/// CSV. Sessions keep the order of their first row; interactions are sorted
/// by timestamp (stable).
pub fn read_interactions_csv<R: Read>(reader: R) -> Result<Vec<RawSequence>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut order: Vec<RawSequence> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        let event = Event::parse(&row.event_type, row.rating)?;
        let slot = *index.entry(row.session_id.clone()).or_insert_with(|| {
            order.push(RawSequence { id: row.session_id.clone(), interactions: Vec::new() });
            order.len() - 1
        });
        order[slot].interactions.push(RawInteraction { item: row.item_id, event, timestamp: row.timestamp });
    }
    for seq in &mut order {
        seq.interactions.sort_by_key(|i| i.timestamp);
    }
    Ok(order)
}

pub fn write_interactions_csv<W: Write>(writer: W, sequences: &[RawSequence]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for seq in sequences {
        for i in &seq.interactions {
            let rating = match i.event {
                Event::Rating(level) => Some(level),
                _ => None,
            };
            wtr.serialize(CsvRow {
                session_id: seq.id.clone(),
                timestamp: i.timestamp,
                item_id: i.item.clone(),
                event_type: i.event.label().to_string(),
                rating,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Which interactions count toward the minimum-length rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LengthCount {
    /// Clicks (and ratings, for rating data); purchases do not count.
    Clicks,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreprocessRules {
    pub min_interactions: usize,
    /// Minimum number of distinct sequences an item must appear in.
    pub min_item_support: usize,
    pub max_length: usize,
    pub length_counts: LengthCount,
}

impl Default for PreprocessRules {
    fn default() -> Self {
        PreprocessRules { min_interactions: 3, min_item_support: 1, max_length: 20, length_counts: LengthCount::Clicks }
    }
}

impl PreprocessRules {
    fn validate(&self) -> Result<()> {
        if self.min_interactions == 0 || self.min_item_support == 0 || self.max_length == 0 {
            return Err(Error::invalid("preprocessing rules must be positive integers"));
        }
        Ok(())
    }

    fn long_enough(&self, seq: &RawSequence) -> bool {
        let n = match self.length_counts {
            LengthCount::All => seq.interactions.len(),
            LengthCount::Clicks => seq.interactions.iter().filter(|i| i.event != Event::Purchase).count(),
        };
        n >= self.min_interactions
    }
}

/// Filters, truncates and densely re-indexes raw sequences.
///
/// Each pass removes items below `min_item_support`, then sequences below
/// `min_interactions`, then truncates to the most recent `max_length`
/// interactions. Passes repeat until nothing changes, so the result is a
/// fixed point and preprocessing is idempotent. Item indices follow order of
/// first appearance.
pub fn preprocess(raw: &[RawSequence], rules: &PreprocessRules, rewards: &RewardMap) -> Result<Dataset> {
    rules.validate()?;
    let mut seqs: Vec<RawSequence> = raw.to_vec();
    for s in &mut seqs {
        s.interactions.sort_by_key(|i| i.timestamp);
    }
    loop {
        let before: (usize, usize) = (seqs.len(), seqs.iter().map(|s| s.interactions.len()).sum());

        if rules.min_item_support > 1 {
            let mut support: HashMap<&str, usize> = HashMap::new();
            for s in &seqs {
                let distinct: HashSet<&str> = s.interactions.iter().map(|i| i.item.as_str()).collect();
                for item in distinct {
                    *support.entry(item).or_default() += 1;
                }
            }
            let keep: HashSet<String> =
                support.into_iter().filter(|&(_, c)| c >= rules.min_item_support).map(|(k, _)| k.to_string()).collect();
            for s in &mut seqs {
                s.interactions.retain(|i| keep.contains(&i.item));
            }
        }
        seqs.retain(|s| rules.long_enough(s));
        for s in &mut seqs {
            let n = s.interactions.len();
            if n > rules.max_length {
                s.interactions.drain(..n - rules.max_length);
            }
        }

        let after = (seqs.len(), seqs.iter().map(|s| s.interactions.len()).sum());
        if after == before {
            break;
        }
    }
    if seqs.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut index: HashMap<String, ItemId> = HashMap::new();
    let mut item_ids = Vec::new();
    let mut sequences = Vec::with_capacity(seqs.len());
    for s in seqs {
        let mut interactions = Vec::with_capacity(s.interactions.len());
        for i in s.interactions {
            let id = *index.entry(i.item.clone()).or_insert_with(|| {
                item_ids.push(i.item.clone());
                ItemId::new(item_ids.len() - 1)
            });
            interactions.push(Interaction {
                item: id,
                event: i.event,
                reward: rewards.reward(i.event)?,
                timestamp: i.timestamp,
            });
        }
        sequences.push(SessionSequence { id: s.id, interactions });
    }
    let n = sequences.len();
    Ok(Dataset { sequences, catalog_size: item_ids.len(), item_ids, splits: vec![Split::Train; n] })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.8, validation: 0.1, test: 0.1 }
    }
}

// splitmix64 over the seed and the bytes of the sequence id.
fn sequence_hash(seed: u64, id: &str) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut h = mix(seed);
    for b in id.bytes() {
        h = mix(h ^ u64::from(b));
    }
    h
}

/// Assigns every sequence to exactly one split. Sequences are ordered by a
/// seeded hash of their id, then cut at the rounded fraction boundaries.
pub fn split(mut dataset: Dataset, fractions: SplitFractions, seed: u64) -> Result<Dataset> {
    let SplitFractions { train, validation, test } = fractions;
    if [train, validation, test].iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::invalid("split fractions must be non-negative"));
    }
    if ((train + validation + test) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {}, expected 1", train + validation + test)));
    }
    let n = dataset.sequences.len();
    let mut order: Vec<(u64, usize)> =
        dataset.sequences.iter().enumerate().map(|(i, s)| (sequence_hash(seed, &s.id), i)).collect();
    order.sort_unstable();
    let n_train = ((train * n as f64).round() as usize).min(n);
    let n_val = ((validation * n as f64).round() as usize).min(n - n_train);
    for (rank, &(_, idx)) in order.iter().enumerate() {
        dataset.splits[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(dataset)
}

/// One example per position `t >= 1`; the last `min(m, len - 1)` examples lie
/// in the loss window and the final one is terminal.
pub fn expand_examples(sequence: &SessionSequence, loss_window: usize) -> Result<Vec<TrainingExample>> {
    if loss_window == 0 {
        return Err(Error::invalid("loss window must be at least 1"));
    }
    let items = sequence.items();
    if items.len() < 2 {
        return Ok(Vec::new());
    }
    let n = items.len() - 1;
    let first_in_window = n - loss_window.min(n);
    Ok((1..items.len())
        .map(|t| {
            let it = &sequence.interactions[t];
            TrainingExample {
                context: items[..t].to_vec(),
                action: it.item,
                reward: it.reward,
                event: it.event,
                next_context: items[..=t].to_vec(),
                terminal: t == n,
                in_loss_window: t > first_in_window,
                return_to_go: it.reward,
                sequence: 0,
            }
        })
        .collect())
}
