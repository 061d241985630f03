//! Compact belief-vector states for the exact tree evaluators.
//!
//! Every belief reachable from an initial state is `Q^k` of the initial
//! belief, of `p` or of `r`, so each user only ever visits a small set of
//! values. Values are interned per class of identical users and a joint
//! state is packed into a `u128` (16 bits per user). Users of one class are
//! interchangeable, so their ids are kept sorted within the class positions.

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::index::WhittleIndex;
use crate::policies::{DownlinkSystem, SystemState, MAX_USERS};
use crate::user::UserModel;

const UNSET: u16 = u16::MAX;

pub(crate) type Key = u128;

#[derive(Debug)]
struct BeliefTable {
    user: UserModel,
    index: WhittleIndex,
    values: Vec<f64>,
    lookup: FxHashMap<u64, u16>,
    idle: Vec<u16>,
    reward: Vec<f64>,
    windex: Vec<f64>,
    high: u16,
    low: u16,
}

impl BeliefTable {
    fn new(user: &UserModel, index: &WhittleIndex) -> Result<Self> {
        let mut t = BeliefTable {
            user: user.clone(),
            index: index.clone(),
            values: Vec::new(),
            lookup: FxHashMap::default(),
            idle: Vec::new(),
            reward: Vec::new(),
            windex: Vec::new(),
            high: 0,
            low: 0,
        };
        t.high = t.intern(user.channel().p())?;
        t.low = t.intern(user.channel().r())?;
        Ok(t)
    }

    fn intern(&mut self, x: f64) -> Result<u16> {
        if let Some(&id) = self.lookup.get(&x.to_bits()) {
            return Ok(id);
        }
        let id = self.values.len();
        if id >= UNSET as usize {
            return Err(Error::InvalidState("too many distinct beliefs".into()));
        }
        let id = id as u16;
        self.values.push(x);
        self.lookup.insert(x.to_bits(), id);
        self.idle.push(UNSET);
        self.reward.push(self.user.reward_raw(x));
        self.windex
            .push(self.index.index(crate::channel::Belief::from_rounded(x)));
        Ok(id)
    }

    fn idle(&mut self, id: u16) -> Result<u16> {
        let next = self.idle[id as usize];
        if next != UNSET {
            return Ok(next);
        }
        let x = self.user.channel().q_raw(self.values[id as usize]);
        let next = self.intern(x)?;
        self.idle[id as usize] = next;
        Ok(next)
    }
}

#[inline]
pub(crate) fn get(key: Key, i: usize) -> u16 {
    (key >> (16 * i)) as u16
}

#[inline]
fn set(key: Key, i: usize, id: u16) -> Key {
    let shift = 16 * i;
    (key & !(0xFFFF_u128 << shift)) | ((id as u128) << shift)
}

/// Interned view of a downlink system.
#[derive(Debug)]
pub(crate) struct Compact {
    tables: Vec<BeliefTable>,
    class_of: Vec<usize>,
    groups: Vec<Vec<usize>>,
    symmetric: bool,
    beta: f64,
}

impl Compact {
    /// `symmetric` enables sorting ids of interchangeable users; only valid
    /// for evaluations that do not depend on user labels.
    pub fn new(sys: &DownlinkSystem, symmetric: bool) -> Result<Self> {
        let n = sys.len();
        if n > MAX_USERS {
            return Err(Error::InvalidSystem(format!(
                "exact evaluation supports at most {MAX_USERS} users, got {n}"
            )));
        }
        let mut tables: Vec<BeliefTable> = Vec::new();
        let mut class_of = Vec::with_capacity(n);
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, user) in sys.users().iter().enumerate() {
            match tables.iter().position(|t| &t.user == user) {
                Some(c) => {
                    class_of.push(c);
                    groups[c].push(i);
                }
                None => {
                    tables.push(BeliefTable::new(user, sys.whittle(i))?);
                    class_of.push(tables.len() - 1);
                    groups.push(vec![i]);
                }
            }
        }
        Ok(Compact {
            tables,
            class_of,
            groups,
            symmetric,
            beta: sys.beta(),
        })
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn encode(&mut self, state: &SystemState) -> Result<Key> {
        let mut key = 0;
        for (i, b) in state.beliefs().iter().enumerate() {
            let id = self.tables[self.class_of[i]].intern(b.get())?;
            key = set(key, i, id);
        }
        Ok(self.canonical(key))
    }

    /// Key of a state whose beliefs are all interned already.
    pub fn encode_known(&self, state: &SystemState) -> Option<Key> {
        let mut key = 0;
        for (i, b) in state.beliefs().iter().enumerate() {
            let id = *self.tables[self.class_of[i]]
                .lookup
                .get(&b.get().to_bits())?;
            key = set(key, i, id);
        }
        Some(self.canonical(key))
    }

    fn canonical(&self, mut key: Key) -> Key {
        if !self.symmetric {
            return key;
        }
        for group in self.groups.iter().filter(|g| g.len() > 1) {
            let mut ids: Vec<u16> = group.iter().map(|&i| get(key, i)).collect();
            ids.sort_unstable();
            for (&i, id) in group.iter().zip(ids) {
                key = set(key, i, id);
            }
        }
        key
    }

    #[inline]
    pub fn belief(&self, key: Key, i: usize) -> f64 {
        self.tables[self.class_of[i]].values[get(key, i) as usize]
    }

    #[inline]
    pub fn reward(&self, key: Key, i: usize) -> f64 {
        self.tables[self.class_of[i]].reward[get(key, i) as usize]
    }

    #[inline]
    pub fn whittle(&self, key: Key, i: usize) -> f64 {
        self.tables[self.class_of[i]].windex[get(key, i) as usize]
    }

    /// Successor when user `scheduled` is served and its channel is
    /// observed high or low.
    pub fn next(&mut self, key: Key, scheduled: usize, high: bool) -> Result<Key> {
        let mut out = key;
        for i in 0..self.len() {
            let table = &mut self.tables[self.class_of[i]];
            let id = if i == scheduled {
                if high {
                    table.high
                } else {
                    table.low
                }
            } else {
                table.idle(get(key, i))?
            };
            out = set(out, i, id);
        }
        Ok(self.canonical(out))
    }

    /// Successor of an already explored transition.
    pub fn next_known(&self, key: Key, scheduled: usize, high: bool) -> Option<Key> {
        let mut out = key;
        for i in 0..self.len() {
            let table = &self.tables[self.class_of[i]];
            let id = if i == scheduled {
                if high {
                    table.high
                } else {
                    table.low
                }
            } else {
                let next = table.idle[get(key, i) as usize];
                if next == UNSET {
                    return None;
                }
                next
            };
            out = set(out, i, id);
        }
        Some(self.canonical(out))
    }

    /// Lowest-index argmax of `score(i)`.
    pub fn argmax(&self, score: impl Fn(usize) -> f64) -> usize {
        let mut best = 0;
        let mut best_score = score(0);
        for i in 1..self.len() {
            let s = score(i);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        best
    }
}

/// Per-remaining-horizon memo tables.
pub(crate) type Memo<T> = Vec<FxHashMap<Key, T>>;

pub(crate) fn memo<T>(horizon: usize) -> Memo<T> {
    (0..=horizon).map(|_| FxHashMap::default()).collect()
}
