//! Controlled-language task grammar.
//!
//! Tasks are parsed by a small recursive-descent parser over a closed set of
//! clause templates. Sequencing words ("then", "and finally", commas) split
//! the text into primary subtasks in order of appearance; "while avoiding",
//! "without passing through" and friends attach auxiliary constraints.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::vocab::{PlaceKind, Vocabulary, WHOLE_AREA};

/// Minimum clearance for avoid constraints when the task does not say otherwise.
pub const DEFAULT_MIN_DIST: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtask {
    GoalWaypoint { x: f64, y: f64 },
    GoalLandmark(String),
    Perimeter(String),
    Explore(String),
    ReturnTo(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    AvoidLandmark { name: String, min_dist: f64 },
    AvoidRegion(String),
    StayWithin(String),
    AvoidPoint { x: f64, y: f64, min_dist: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub raw_text: String,
    pub primaries: Vec<Subtask>,
    pub auxiliaries: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("task text is empty")]
    EmptyTask,
    #[error("unknown symbol '{0}'")]
    UnknownSymbol(String),
    #[error("task has constraints but no objective")]
    NoObjective,
    #[error("syntax error at token {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

impl Subtask {
    /// Stable lookup key for embeddings. Lowercase, single-spaced, and
    /// parseable back into the same variant.
    pub fn canonical_text(&self) -> String {
        match self {
            Subtask::GoalWaypoint { x, y } => format!("visit waypoint {} {}", fmt_num(*x), fmt_num(*y)),
            Subtask::GoalLandmark(n) => format!("navigate to {n}"),
            Subtask::Perimeter(n) => format!("navigate around the {n}"),
            Subtask::Explore(n) => format!("explore the {n}"),
            Subtask::ReturnTo(n) => format!("return to {n}"),
        }
    }
}

impl Constraint {
    pub fn canonical_text(&self) -> String {
        match self {
            Constraint::AvoidLandmark { name, min_dist } if *min_dist == DEFAULT_MIN_DIST => {
                format!("avoid the {name}")
            }
            Constraint::AvoidLandmark { name, min_dist } => {
                format!("avoid the {name} by {} m", fmt_num(*min_dist))
            }
            Constraint::AvoidRegion(n) => format!("avoid the {n}"),
            Constraint::StayWithin(n) => format!("stay within the {n}"),
            Constraint::AvoidPoint { x, y, min_dist } if *min_dist == DEFAULT_MIN_DIST => {
                format!("avoid point {} {}", fmt_num(*x), fmt_num(*y))
            }
            Constraint::AvoidPoint { x, y, min_dist } => {
                format!("avoid point {} {} by {} m", fmt_num(*x), fmt_num(*y), fmt_num(*min_dist))
            }
        }
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_text())
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_text())
    }
}

/// Either half of a task, for code that treats both uniformly.
#[derive(Debug, Clone, Copy)]
pub enum TaskItem<'a> {
    Subtask(&'a Subtask),
    Constraint(&'a Constraint),
}

impl<'a> From<&'a Subtask> for TaskItem<'a> {
    fn from(s: &'a Subtask) -> Self {
        TaskItem::Subtask(s)
    }
}

impl<'a> From<&'a Constraint> for TaskItem<'a> {
    fn from(c: &'a Constraint) -> Self {
        TaskItem::Constraint(c)
    }
}

pub fn canonical_text<'a>(item: impl Into<TaskItem<'a>>) -> String {
    match item.into() {
        TaskItem::Subtask(s) => s.canonical_text(),
        TaskItem::Constraint(c) => c.canonical_text(),
    }
}

impl TaskSpec {
    /// Canonical keys of every primary then every auxiliary, in order.
    pub fn canonical_keys(&self) -> Vec<String> {
        self.primaries
            .iter()
            .map(Subtask::canonical_text)
            .chain(self.auxiliaries.iter().map(Constraint::canonical_text))
            .collect()
    }

    /// Names of every place the task refers to.
    pub fn place_names(&self) -> Vec<&str> {
        let mut names = Vec::new();
        for s in &self.primaries {
            match s {
                Subtask::GoalLandmark(n) | Subtask::Perimeter(n) | Subtask::Explore(n) | Subtask::ReturnTo(n) => {
                    names.push(n.as_str())
                }
                Subtask::GoalWaypoint { .. } => {}
            }
        }
        for c in &self.auxiliaries {
            match c {
                Constraint::AvoidLandmark { name, .. } => names.push(name.as_str()),
                Constraint::AvoidRegion(n) | Constraint::StayWithin(n) => names.push(n.as_str()),
                Constraint::AvoidPoint { .. } => {}
            }
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Num(f64),
    Open,
    Close,
    Comma,
    Stop,
}

fn tokenize(text: &str) -> Result<Vec<Tok>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let starts_number = |i: usize| -> bool {
        let c = chars[i];
        let next_digit = |j: usize| j < chars.len() && chars[j].is_ascii_digit();
        c.is_ascii_digit()
            || (c == '.' && next_digit(i + 1))
            || ((c == '-' || c == '+')
                && (next_digit(i + 1) || (i + 2 < chars.len() && chars[i + 1] == '.' && next_digit(i + 2)))
                && (i == 0 || !chars[i - 1].is_alphanumeric()))
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if starts_number(i) {
            let start = i;
            i += 1;
            let mut seen_dot = c == '.';
            while i < chars.len() {
                let d = chars[i];
                if d.is_ascii_digit() {
                    i += 1;
                } else if d == '.' && !seen_dot && i + 1 < chars.len() && chars[i + 1].is_ascii_digit() {
                    seen_dot = true;
                    i += 1;
                } else {
                    break;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| ParseError::Syntax { pos: toks.len(), msg: format!("bad number '{s}'") })?;
            toks.push(Tok::Num(v));
        } else if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '\'') {
                i += 1;
            }
            toks.push(Tok::Word(chars[start..i].iter().collect::<String>().to_lowercase()));
        } else {
            match c {
                '(' | '[' => toks.push(Tok::Open),
                ')' | ']' => toks.push(Tok::Close),
                ',' => toks.push(Tok::Comma),
                '.' | '!' | ';' => toks.push(Tok::Stop),
                '-' | '"' | '\'' => {}
                other => {
                    return Err(ParseError::Syntax { pos: toks.len(), msg: format!("unexpected character '{other}'") })
                }
            }
            i += 1;
        }
    }
    Ok(toks)
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| c.is_whitespace() || c == '-')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const WHOLE_AREA_ALIASES: &[&str] = &[
    "whole area", "entire area", "area", "whole lake", "entire lake", "lake", "whole environment",
    "entire environment", "environment", "whole arena", "entire arena", "arena",
];

const AREA_SUFFIX: &[&str] = &["lake", "environment", "area", "arena"];

const GO_VERBS: &[&str] = &["go", "navigate", "proceed", "visit", "head", "travel", "move", "reach", "sail"];

const POINT_NOUNS: &[&str] = &[
    "location", "coordinates", "coordinate", "point", "waypoint", "position", "submerged rock", "rock", "buoy",
    "obstacle",
];

struct Parser<'v> {
    toks: Vec<Tok>,
    pos: usize,
    vocab: &'v Vocabulary,
    names: Vec<(Vec<String>, String)>,
    primaries: Vec<Subtask>,
    auxiliaries: Vec<Constraint>,
    standalone_avoid: bool,
    end_at: Option<String>,
}

/// Parse `text` against the places in `vocab`.
pub fn parse_task(text: &str, vocab: &Vocabulary) -> Result<TaskSpec, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyTask);
    }
    let toks = tokenize(text)?;
    if toks.iter().all(|t| *t == Tok::Stop || *t == Tok::Comma) {
        return Err(ParseError::EmptyTask);
    }
    let mut names: Vec<(Vec<String>, String)> =
        vocab.places.iter().map(|p| (words(&p.name), p.name.clone())).collect();
    if vocab.get(WHOLE_AREA).is_some() {
        names.extend(WHOLE_AREA_ALIASES.iter().map(|a| (words(a), WHOLE_AREA.to_string())));
    }
    names.sort_by_key(|n| std::cmp::Reverse(n.0.len()));

    let mut p = Parser {
        toks,
        pos: 0,
        vocab,
        names,
        primaries: Vec::new(),
        auxiliaries: Vec::new(),
        standalone_avoid: false,
        end_at: None,
    };
    p.task()?;

    let mut primaries = p.primaries;
    if primaries.is_empty() {
        // A bare "avoid X" command is a task of operating anywhere else.
        if p.standalone_avoid && vocab.get(WHOLE_AREA).is_some() {
            primaries.push(Subtask::Explore(WHOLE_AREA.to_string()));
        } else if p.end_at.is_none() {
            return Err(ParseError::NoObjective);
        }
    }
    if let Some(home) = p.end_at {
        primaries.push(Subtask::ReturnTo(home));
    }
    Ok(TaskSpec { raw_text: text.to_string(), primaries, auxiliaries: p.auxiliaries })
}

impl<'v> Parser<'v> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_word(&self, offset: usize) -> Option<&str> {
        match self.toks.get(self.pos + offset) {
            Some(Tok::Word(w)) => Some(w.as_str()),
            _ => None,
        }
    }

    fn at_seq(&self, seq: &[&str]) -> bool {
        seq.iter().enumerate().all(|(k, w)| self.peek_word(k) == Some(*w))
    }

    fn eat_seq(&mut self, seq: &[&str]) -> bool {
        if self.at_seq(seq) {
            self.pos += seq.len();
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        self.eat_seq(&[w])
    }

    fn eat_any(&mut self, options: &[&str]) -> bool {
        options.iter().any(|o| self.eat_seq(&words(o).iter().map(String::as_str).collect::<Vec<_>>()))
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { pos: self.pos, msg: msg.into() })
    }

    fn unknown<T>(&self) -> Result<T, ParseError> {
        let mut sym = Vec::new();
        let mut k = self.pos;
        while let Some(Tok::Word(w)) = self.toks.get(k) {
            if sym.len() == 3 || ["while", "and", "then", "avoiding", "without"].contains(&w.as_str()) {
                break;
            }
            sym.push(w.clone());
            k += 1;
        }
        if sym.is_empty() {
            return self.syntax("expected a place name");
        }
        Err(ParseError::UnknownSymbol(sym.join(" ")))
    }

    fn task(&mut self) -> Result<(), ParseError> {
        loop {
            while matches!(self.peek(), Some(Tok::Comma) | Some(Tok::Stop))
                || self.eat_any(&["and", "then", "finally", "also", "after that", "afterwards", "next"])
            {
                if matches!(self.peek(), Some(Tok::Comma) | Some(Tok::Stop)) {
                    self.pos += 1;
                }
            }
            if self.peek().is_none() {
                return Ok(());
            }
            self.clause()?;
        }
    }

    fn clause(&mut self) -> Result<(), ParseError> {
        let Some(first) = self.peek_word(0).map(str::to_string) else {
            return self.syntax("expected a clause");
        };
        if self.eat_seq(&["start", "and", "end", "at"]) || self.eat_seq(&["start", "and", "finish", "at"]) {
            let name = self.landmark()?;
            self.end_at = Some(name);
            return Ok(());
        }
        if self.eat_seq(&["start", "at"]) || self.eat_seq(&["start", "from"]) || self.eat_seq(&["starting", "at"]) {
            // The start pose comes from the simulator reset.
            self.place()?;
            return Ok(());
        }
        if self.eat_any(&["this task has to be completed by", "this task must be completed by", "the task has to be completed by", "the task must be completed by"]) {
            return self.attached_constraint(true);
        }
        if GO_VERBS.contains(&first.as_str()) {
            self.pos += 1;
            return self.motion();
        }
        if self.eat_word("circumnavigate") {
            let (name, _) = self.place()?;
            self.primaries.push(Subtask::Perimeter(name));
            return self.trailing_constraints();
        }
        if self.eat_any(&["traverse", "follow", "trace"]) {
            self.eat_word("the");
            if !self.eat_any(&["boundary of", "perimeter of", "edge of", "border of", "shoreline of"]) {
                return self.syntax("expected 'boundary of' or 'perimeter of'");
            }
            let (name, _) = self.place()?;
            self.primaries.push(Subtask::Perimeter(name));
            return self.trailing_constraints();
        }
        if self.at_seq(&["around"]) {
            return self.motion();
        }
        if self.eat_any(&["explore", "survey", "conduct an exploration of", "conduct a survey of", "perform an exploration of"]) {
            let name = self.region()?;
            self.primaries.push(Subtask::Explore(name));
            return self.trailing_constraints();
        }
        if self.eat_any(&["return to", "return", "come back to", "go back to"]) {
            let name = self.landmark()?;
            self.primaries.push(Subtask::ReturnTo(name));
            return self.trailing_constraints();
        }
        if self.eat_any(&["avoid", "steer clear of", "stay away from", "keep away from", "keep clear of"]) {
            self.standalone_avoid = true;
            let c = self.avoid_target()?;
            self.auxiliaries.push(c);
            return self.trailing_constraints();
        }
        if self.at_seq(&["to"]) {
            self.pos += 1;
            let s = self.goal_target()?;
            self.primaries.push(s);
            return self.trailing_constraints();
        }
        if matches!(first.as_str(), "while" | "avoiding" | "without" | "staying" | "stay" | "keeping") {
            return self.attached_constraint(false);
        }
        self.unknown()
    }

    fn motion(&mut self) -> Result<(), ParseError> {
        if self.eat_word("around") {
            self.eat_any(&["the perimeter of", "perimeter of"]);
            let (name, _) = self.place()?;
            self.primaries.push(Subtask::Perimeter(name));
        } else if self.eat_any(&["the perimeter of", "along the perimeter of", "perimeter of", "the boundary of"]) {
            let (name, _) = self.place()?;
            self.primaries.push(Subtask::Perimeter(name));
        } else {
            self.eat_any(&["to", "towards", "toward"]);
            let s = self.goal_target()?;
            self.primaries.push(s);
        }
        self.trailing_constraints()
    }

    fn trailing_constraints(&mut self) -> Result<(), ParseError> {
        loop {
            let save = self.pos;
            if matches!(self.peek(), Some(Tok::Comma)) {
                self.pos += 1;
            }
            if matches!(self.peek_word(0), Some("while" | "avoiding" | "without" | "staying" | "keeping")) {
                self.attached_constraint(false)?;
            } else {
                self.pos = save;
                return Ok(());
            }
        }
    }

    fn attached_constraint(&mut self, allow_bare: bool) -> Result<(), ParseError> {
        self.eat_word("while");
        if self.eat_any(&["avoiding", "steering clear of", "staying away from", "keeping away from", "keeping clear of", "without passing through", "without entering", "without crossing", "without going through"])
            || (allow_bare && self.eat_word("avoid"))
        {
            let c = self.avoid_target()?;
            self.auxiliaries.push(c);
            return Ok(());
        }
        if self.eat_any(&["staying within", "staying inside", "staying in", "stay within", "stay inside", "remaining within", "keeping within"]) {
            let name = self.region()?;
            self.auxiliaries.push(Constraint::StayWithin(name));
            return Ok(());
        }
        self.syntax("expected a constraint such as 'avoiding ...' or 'staying within ...'")
    }

    fn coordinate(&mut self) -> Result<Option<(f64, f64)>, ParseError> {
        let bracketed = matches!(self.peek(), Some(Tok::Open));
        if !bracketed && !matches!(self.peek(), Some(Tok::Num(_))) {
            return Ok(None);
        }
        if bracketed {
            self.pos += 1;
        }
        let x = self.number()?;
        if matches!(self.peek(), Some(Tok::Comma)) {
            self.pos += 1;
        }
        let y = self.number()?;
        if bracketed {
            if !matches!(self.peek(), Some(Tok::Close)) {
                return self.syntax("expected closing bracket");
            }
            self.pos += 1;
        }
        Ok(Some((x, y)))
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => self.syntax("expected a number"),
        }
    }

    fn point_ref(&mut self) -> Result<Option<(f64, f64)>, ParseError> {
        let save = self.pos;
        self.eat_word("the");
        if let Some(p) = self.coordinate()? {
            return Ok(Some(p));
        }
        if self.eat_any(POINT_NOUNS) {
            self.eat_word("at");
            if let Some(p) = self.coordinate()? {
                return Ok(Some(p));
            }
            return self.syntax("expected coordinates");
        }
        self.pos = save;
        Ok(None)
    }

    fn goal_target(&mut self) -> Result<Subtask, ParseError> {
        if let Some((x, y)) = self.point_ref()? {
            return Ok(Subtask::GoalWaypoint { x, y });
        }
        let save = self.pos;
        self.eat_word("the");
        if !self.eat_any(&["area in front of", "front of", "vicinity of", "area near", "area around"]) {
            self.pos = save;
        }
        let name = self.landmark()?;
        Ok(Subtask::GoalLandmark(name))
    }

    fn avoid_target(&mut self) -> Result<Constraint, ParseError> {
        let c = if let Some((x, y)) = self.point_ref()? {
            Constraint::AvoidPoint { x, y, min_dist: DEFAULT_MIN_DIST }
        } else {
            let (name, kind) = self.place()?;
            match kind {
                PlaceKind::Landmark => Constraint::AvoidLandmark { name, min_dist: DEFAULT_MIN_DIST },
                PlaceKind::Region => Constraint::AvoidRegion(name),
            }
        };
        if self.eat_word("by") {
            self.eat_seq(&["at", "least"]);
            let d = self.number()?;
            if !(d.is_finite() && d > 0.0) {
                return self.syntax("minimum distance must be positive");
            }
            self.eat_any(&["meters", "metres", "m"]);
            return match c {
                Constraint::AvoidLandmark { name, .. } => Ok(Constraint::AvoidLandmark { name, min_dist: d }),
                Constraint::AvoidPoint { x, y, .. } => Ok(Constraint::AvoidPoint { x, y, min_dist: d }),
                _ => self.syntax("regions take no minimum distance"),
            };
        }
        Ok(c)
    }

    fn landmark(&mut self) -> Result<String, ParseError> {
        let (name, kind) = self.place()?;
        if kind != PlaceKind::Landmark {
            return self.syntax(format!("'{name}' is a region, expected a landmark"));
        }
        Ok(name)
    }

    fn region(&mut self) -> Result<String, ParseError> {
        let (name, kind) = self.place()?;
        if kind != PlaceKind::Region {
            return self.syntax(format!("'{name}' is a landmark, expected a region"));
        }
        Ok(name)
    }

    fn place(&mut self) -> Result<(String, PlaceKind), ParseError> {
        self.eat_word("the");
        let found = self.names.iter().find(|(ws, _)| {
            ws.iter().enumerate().all(|(k, w)| self.peek_word(k) == Some(w.as_str()))
        });
        let Some((ws, name)) = found.cloned() else {
            return self.unknown();
        };
        self.pos += ws.len();
        let kind = self.vocab.get(&name).map(|p| p.kind).unwrap_or(PlaceKind::Region);
        if kind == PlaceKind::Region && name != WHOLE_AREA {
            let save = self.pos;
            if !(self.eat_seq(&["of", "the"]) && self.eat_any(AREA_SUFFIX)) {
                self.pos = save;
            }
        }
        Ok((name, kind))
    }
}
