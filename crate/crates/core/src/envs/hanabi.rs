//! Miniature two-player Hanabi.
//!
//! Cards have a color and a rank (0-based internally). Players see the
//! partner's hand but not their own, and on their turn either play a card,
//! discard it to regain an information token, or spend a token to tell the
//! partner which of their cards share a color or rank. A failed play burns a
//! fuse; losing the last fuse ends the episode with score zero.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, DecPomdp, EnvContract, StepOutcome, NUM_AGENTS};
use crate::error::{EqcError, Result};
use crate::group::{cycle, transposition, Block, FeatureLayout, Perm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiniHanabiConfig {
    pub colors: usize,
    pub ranks: usize,
    pub hand_size: usize,
    /// Copies of each rank, shared by all colors.
    pub copies: Vec<usize>,
    pub info_tokens: usize,
    pub fuse_tokens: usize,
    pub seed: u64,
    /// Per-color override of `copies`; makes colors distinguishable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color_copies: Option<Vec<Vec<usize>>>,
}

impl Default for MiniHanabiConfig {
    fn default() -> Self {
        MiniHanabiConfig {
            colors: 3,
            ranks: 2,
            hand_size: 2,
            copies: vec![2, 1],
            info_tokens: 3,
            fuse_tokens: 2,
            seed: 0,
            color_copies: None,
        }
    }
}

impl MiniHanabiConfig {
    /// Full-game copy profile with the given number of colors.
    pub fn full_profile(colors: usize) -> Self {
        MiniHanabiConfig {
            colors,
            ranks: 5,
            hand_size: 5,
            copies: vec![3, 2, 2, 2, 1],
            info_tokens: 8,
            fuse_tokens: 3,
            ..Default::default()
        }
    }

    pub fn copies_of(&self, color: usize, rank: usize) -> usize {
        match &self.color_copies {
            Some(cc) => cc[color][rank],
            None => self.copies[rank],
        }
    }

    pub fn deck_size(&self) -> usize {
        (0..self.colors)
            .map(|c| (0..self.ranks).map(|r| self.copies_of(c, r)).sum::<usize>())
            .sum()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EqcError::InvalidConfig(format!("mini-hanabi: {m}")));
        if self.colors == 0 || self.ranks == 0 || self.hand_size == 0 {
            return bad("colors, ranks and hand size must be positive");
        }
        if self.fuse_tokens == 0 {
            return bad("at least one fuse token is required");
        }
        if self.copies.len() != self.ranks {
            return bad("copies must list one count per rank");
        }
        if let Some(cc) = &self.color_copies {
            if cc.len() != self.colors || cc.iter().any(|r| r.len() != self.ranks) {
                return bad("color_copies must be colors x ranks");
            }
        }
        if self.deck_size() == 0 {
            return bad("empty deck");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Card {
    pub color: usize,
    pub rank: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Knowledge {
    color: Option<usize>,
    rank: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Move {
    Play(usize),
    Discard(usize),
    HintColor(usize),
    HintRank(usize),
}

#[derive(Clone, Debug)]
pub struct MiniHanabi {
    config: MiniHanabiConfig,
    contract: EnvContract,
    deck: Vec<Card>,
    hands: [Vec<Option<Card>>; NUM_AGENTS],
    known: [Vec<Knowledge>; NUM_AGENTS],
    fireworks: Vec<usize>,
    discards: Vec<Vec<usize>>,
    info: usize,
    fuse: usize,
    turn: usize,
    final_turns: Option<usize>,
    done: bool,
    bombed: bool,
    total: f64,
    last_action: [Option<usize>; NUM_AGENTS],
    /// Slots of agent i touched by the partner's latest action, if a hint.
    touched: [Vec<bool>; NUM_AGENTS],
}

impl MiniHanabi {
    pub fn new(config: MiniHanabiConfig) -> Result<Self> {
        config.validate()?;
        let c = config.colors;
        let r = config.ranks;
        let h = config.hand_size;
        let mut obs = vec![Block::Fixed { width: 1 }];
        for _ in 0..2 * h {
            obs.push(Block::Fixed { width: 1 });
            obs.push(Block::Symmetric { slabs: c, width: 1 });
            obs.push(Block::Fixed { width: r });
        }
        obs.extend([
            Block::Symmetric { slabs: c, width: r + 1 },
            Block::Fixed {
                width: config.info_tokens,
            },
            Block::Fixed {
                width: config.fuse_tokens,
            },
            Block::Symmetric { slabs: c, width: r },
            Block::Symmetric { slabs: c, width: r },
            Block::Fixed { width: 1 },
        ]);
        let act = vec![
            Block::Fixed { width: 2 * h },
            Block::Symmetric { slabs: c, width: 1 },
            Block::Fixed { width: r },
        ];
        obs.extend(act.iter().copied());
        obs.push(Block::Fixed { width: h });
        let mut gens = Vec::new();
        if c >= 2 {
            gens.push(transposition(c, 0, 1));
            if c > 2 {
                gens.push(cycle(c));
            }
        } else {
            gens.push(Perm::identity(c));
        }
        let d = config.deck_size();
        let contract = EnvContract {
            num_agents: NUM_AGENTS,
            obs_layout: FeatureLayout::new(obs),
            act_layout: FeatureLayout::new(act),
            horizon: 2 * d + config.info_tokens + c,
            degree: c,
            orbit: (0..c).collect(),
            symmetry_generators: gens,
        };
        let mut env = MiniHanabi {
            contract,
            deck: Vec::new(),
            hands: [vec![None; h], vec![None; h]],
            known: [vec![Knowledge::default(); h], vec![Knowledge::default(); h]],
            fireworks: vec![0; c],
            discards: vec![vec![0; r]; c],
            info: config.info_tokens,
            fuse: config.fuse_tokens,
            turn: 0,
            final_turns: None,
            done: false,
            bombed: false,
            total: 0.0,
            last_action: [None; NUM_AGENTS],
            touched: [vec![false; h], vec![false; h]],
            config,
        };
        env.reset(env.config.seed);
        Ok(env)
    }

    pub fn config(&self) -> &MiniHanabiConfig {
        &self.config
    }

    /// Sum of firework heights, or zero after a bombout.
    pub fn score(&self) -> usize {
        if self.bombed {
            0
        } else {
            self.fireworks.iter().sum()
        }
    }

    pub fn fireworks(&self) -> &[usize] {
        &self.fireworks
    }

    pub fn info_tokens(&self) -> usize {
        self.info
    }

    pub fn fuse_tokens(&self) -> usize {
        self.fuse
    }

    pub fn deck_len(&self) -> usize {
        self.deck.len()
    }

    pub fn hand(&self, agent: usize) -> &[Option<Card>] {
        &self.hands[agent]
    }

    /// Cards currently in deck, hands, discard piles and fireworks.
    pub fn card_count(&self) -> usize {
        self.deck.len()
            + self.hands.iter().flatten().filter(|c| c.is_some()).count()
            + self.discards.iter().flatten().sum::<usize>()
            + self.fireworks.iter().sum::<usize>()
    }

    /// Replace the shuffled deck, dealing from the back. Test fixture hook.
    pub fn reset_with_deck(&mut self, deck: Vec<Card>) {
        let h = self.config.hand_size;
        self.deck = deck;
        self.hands = [vec![None; h], vec![None; h]];
        self.known = [vec![Knowledge::default(); h], vec![Knowledge::default(); h]];
        self.fireworks = vec![0; self.config.colors];
        self.discards = vec![vec![0; self.config.ranks]; self.config.colors];
        self.info = self.config.info_tokens;
        self.fuse = self.config.fuse_tokens;
        self.turn = 0;
        self.final_turns = None;
        self.done = false;
        self.bombed = false;
        self.total = 0.0;
        self.last_action = [None; NUM_AGENTS];
        self.touched = [vec![false; h], vec![false; h]];
        for k in 0..h {
            for agent in 0..NUM_AGENTS {
                self.hands[agent][k] = self.deck.pop();
            }
        }
        if self.deck.is_empty() {
            self.final_turns = Some(NUM_AGENTS);
        }
    }

    fn decode(&self, a: usize) -> Move {
        let h = self.config.hand_size;
        let c = self.config.colors;
        if a < h {
            Move::Play(a)
        } else if a < 2 * h {
            Move::Discard(a - h)
        } else if a < 2 * h + c {
            Move::HintColor(a - 2 * h)
        } else {
            Move::HintRank(a - 2 * h - c)
        }
    }

    fn legal(&self, agent: usize) -> Vec<bool> {
        let h = self.config.hand_size;
        let c = self.config.colors;
        let r = self.config.ranks;
        let mut out = vec![false; 2 * h + c + r];
        if self.done || agent != self.turn {
            return out;
        }
        for k in 0..h {
            let present = self.hands[agent][k].is_some();
            out[k] = present;
            out[h + k] = present;
        }
        if self.info > 0 {
            for card in self.hands[1 - agent].iter().flatten() {
                out[2 * h + card.color] = true;
                out[2 * h + c + card.rank] = true;
            }
        }
        out
    }

    fn draw_into(&mut self, agent: usize, slot: usize) -> bool {
        self.known[agent][slot] = Knowledge::default();
        self.hands[agent][slot] = self.deck.pop();
        self.hands[agent][slot].is_some() && self.deck.is_empty()
    }
}

fn one_hot(out: &mut Vec<f64>, width: usize, hot: Option<usize>) {
    let start = out.len();
    out.resize(start + width, 0.0);
    if let Some(i) = hot {
        out[start + i] = 1.0;
    }
}

fn thermometer(out: &mut Vec<f64>, width: usize, level: usize) {
    out.extend((0..width).map(|i| if i < level { 1.0 } else { 0.0 }));
}

impl DecPomdp for MiniHanabi {
    fn contract(&self) -> &EnvContract {
        &self.contract
    }

    fn reset(&mut self, seed: u64) {
        let mut deck = Vec::with_capacity(self.config.deck_size());
        for color in 0..self.config.colors {
            for rank in 0..self.config.ranks {
                for _ in 0..self.config.copies_of(color, rank) {
                    deck.push(Card { color, rank });
                }
            }
        }
        deck.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.reset_with_deck(deck);
    }

    fn observation(&self, agent: usize) -> Vec<f64> {
        let cfg = &self.config;
        let (c, r, h) = (cfg.colors, cfg.ranks, cfg.hand_size);
        let partner = 1 - agent;
        let mut o = Vec::with_capacity(self.contract.obs_width());
        o.push(if !self.done && self.turn == agent { 1.0 } else { 0.0 });
        for card in &self.hands[partner] {
            o.push(if card.is_some() { 1.0 } else { 0.0 });
            one_hot(&mut o, c, card.map(|x| x.color));
            one_hot(&mut o, r, card.map(|x| x.rank));
        }
        for (card, k) in self.hands[agent].iter().zip(&self.known[agent]) {
            o.push(if card.is_some() { 1.0 } else { 0.0 });
            one_hot(&mut o, c, k.color);
            one_hot(&mut o, r, k.rank);
        }
        for &height in &self.fireworks {
            one_hot(&mut o, r + 1, Some(height));
        }
        thermometer(&mut o, cfg.info_tokens, self.info);
        thermometer(&mut o, cfg.fuse_tokens, self.fuse);
        for color in &self.discards {
            o.extend(color.iter().map(|&n| n as f64));
        }
        // Copies not yet seen by this agent, measured against the config.
        for color in 0..c {
            for rank in 0..r {
                let in_partner = self.hands[partner]
                    .iter()
                    .flatten()
                    .filter(|x| x.color == color && x.rank == rank)
                    .count();
                let played = usize::from(self.fireworks[color] > rank);
                let seen = self.discards[color][rank] + played + in_partner;
                o.push(cfg.copies_of(color, rank) as f64 - seen as f64);
            }
        }
        o.push(self.deck.len() as f64);
        one_hot(&mut o, 2 * h + c + r, self.last_action[partner]);
        o.extend(self.touched[agent].iter().map(|&t| if t { 1.0 } else { 0.0 }));
        o
    }

    fn acting_agents(&self) -> Vec<usize> {
        if self.done {
            vec![]
        } else {
            vec![self.turn]
        }
    }

    fn legal_actions(&self, agent: usize) -> Vec<bool> {
        self.legal(agent)
    }

    fn step(&mut self, actions: &[Option<usize>; NUM_AGENTS]) -> Result<StepOutcome> {
        check_actions(self, actions)?;
        let agent = self.turn;
        let partner = 1 - agent;
        let a = actions[agent].expect("checked");
        let mut reward = 0.0;
        let mut drew_last = false;
        self.touched[partner].iter_mut().for_each(|t| *t = false);
        match self.decode(a) {
            Move::Play(k) => {
                let card = self.hands[agent][k].take().expect("legal play");
                if self.fireworks[card.color] == card.rank {
                    self.fireworks[card.color] += 1;
                    reward += 1.0;
                    if self.fireworks[card.color] == self.config.ranks {
                        self.info = (self.info + 1).min(self.config.info_tokens);
                    }
                } else {
                    self.discards[card.color][card.rank] += 1;
                    self.fuse -= 1;
                    if self.fuse == 0 {
                        // Losing the last fuse forfeits everything scored.
                        reward = -(self.total);
                        self.bombed = true;
                        self.done = true;
                    }
                }
                drew_last = self.draw_into(agent, k);
            }
            Move::Discard(k) => {
                let card = self.hands[agent][k].take().expect("legal discard");
                self.discards[card.color][card.rank] += 1;
                self.info = (self.info + 1).min(self.config.info_tokens);
                drew_last = self.draw_into(agent, k);
            }
            Move::HintColor(color) => {
                self.info -= 1;
                for k in 0..self.config.hand_size {
                    if self.hands[partner][k].is_some_and(|x| x.color == color) {
                        self.known[partner][k].color = Some(color);
                        self.touched[partner][k] = true;
                    }
                }
            }
            Move::HintRank(rank) => {
                self.info -= 1;
                for k in 0..self.config.hand_size {
                    if self.hands[partner][k].is_some_and(|x| x.rank == rank) {
                        self.known[partner][k].rank = Some(rank);
                        self.touched[partner][k] = true;
                    }
                }
            }
        }
        self.last_action[agent] = Some(a);
        self.total += reward;
        if drew_last {
            self.final_turns = Some(NUM_AGENTS);
        } else if let Some(n) = self.final_turns {
            self.final_turns = Some(n - 1);
        }
        if self.final_turns == Some(0) || self.fireworks.iter().all(|&f| f == self.config.ranks) {
            self.done = true;
        }
        self.turn = partner;
        if !self.done && !self.legal(self.turn).contains(&true) {
            self.done = true;
        }
        Ok(StepOutcome {
            reward,
            terminal: self.done,
        })
    }

    fn is_terminal(&self) -> bool {
        self.done
    }

    fn episode_return(&self) -> f64 {
        self.total
    }

    fn failed(&self) -> Option<bool> {
        Some(self.bombed)
    }

    /// Recolor every card and color-indexed counter. The config is left as
    /// is, so a deck whose colors differ in composition is not symmetric.
    fn relabel(&mut self, g: &Perm) -> Result<()> {
        let c = self.config.colors;
        if g.degree() != c {
            return Err(EqcError::DegreeMismatch {
                expected: c,
                got: g.degree(),
            });
        }
        let map_card = |x: &mut Card| x.color = g.image(x.color);
        self.deck.iter_mut().for_each(map_card);
        for hand in &mut self.hands {
            hand.iter_mut().flatten().for_each(map_card);
        }
        for k in self.known.iter_mut().flatten() {
            k.color = k.color.map(|x| g.image(x));
        }
        self.fireworks = g.apply(&self.fireworks);
        let mut discards = vec![Vec::new(); c];
        for (color, row) in self.discards.drain(..).enumerate() {
            discards[g.image(color)] = row;
        }
        self.discards = discards;
        let h = self.config.hand_size;
        for a in self.last_action.iter_mut().flatten() {
            if (2 * h..2 * h + c).contains(a) {
                *a = 2 * h + g.image(*a - 2 * h);
            }
        }
        Ok(())
    }
}
