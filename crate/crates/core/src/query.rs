//! Compact monitoring-query language.
//!
//! ```text
//! query   := SELECT select [WHERE pred (AND pred)*] [window]
//! select  := FRAMES | COUNT | AVG '(' class ')'
//! pred    := COUNT '(' class | '*' ')' ('=' | '>=' | '<=') int
//!          | var ':' class [IN region [OVERLAP real]]
//!          | var IN region [OVERLAP real]
//!          | var '.' attr '=' value
//!          | ORDER '(' varref ',' varref | region ')' '=' relation
//! varref  := var [':' class]
//! window  := WINDOW int ADVANCE int
//!          | WINDOW (HOPPING | HOPING) '(' SIZE int ',' ADVANCE [BY] int ')'
//! ```
//!
//! Keywords are case-insensitive; names are not. `ORDER(x, y) = R` holds when
//! `y` lies `R` of `x`, so `ORDER(c:car, p:person) = RIGHT` selects frames
//! with a person to the right of a car.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClassId, ClassTable, RegionMode, RegionSet};
use crate::predicates::{Comparator, CountPredicate, SpatialRelation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "class", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SelectKind {
    Frames,
    CountFrames,
    AvgClassCount(ClassId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrConstraint {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    pub class_id: ClassId,
    pub attrs: Vec<AttrConstraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPred {
    pub var: String,
    pub region: String,
    pub mode: RegionMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum SpatialTarget {
    Var(String),
    Region(String),
}

/// `ORDER(subject, target) = relation`: the target lies `relation` of the
/// subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialPred {
    pub subject: String,
    pub target: SpatialTarget,
    pub relation: SpatialRelation,
}

/// Hopping window over frame positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub size: u64,
    pub advance: u64,
}

impl WindowSpec {
    pub fn new(size: u64, advance: u64) -> Option<Self> {
        (advance >= 1 && size >= advance).then_some(Self { size, advance })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAst {
    pub select: SelectKind,
    pub vars: Vec<VarDecl>,
    pub count_preds: Vec<CountPredicate>,
    pub region_preds: Vec<RegionPred>,
    pub spatial_preds: Vec<SpatialPred>,
    pub window: Option<WindowSpec>,
}

impl QueryAst {
    /// Predicates consist only of counts.
    pub fn is_count_only(&self) -> bool {
        self.vars.is_empty() && self.region_preds.is_empty() && self.spatial_preds.is_empty()
    }

    pub fn var(&self, name: &str) -> Option<&VarDecl> {
        self.vars.iter().find(|v| v.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryErrorKind {
    Lexical,
    Syntax,
    UnknownClass,
    UnknownRegion,
    UndeclaredVariable,
    ConflictingDeclaration,
    Shape,
}

impl fmt::Display for QueryErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryErrorKind::Lexical => "lexical error",
            QueryErrorKind::Syntax => "syntax error",
            QueryErrorKind::UnknownClass => "unknown class",
            QueryErrorKind::UnknownRegion => "unknown region",
            QueryErrorKind::UndeclaredVariable => "undeclared variable",
            QueryErrorKind::ConflictingDeclaration => "conflicting declaration",
            QueryErrorKind::Shape => "query shape error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at {pos}: {message}")]
pub struct QueryError {
    pub kind: QueryErrorKind,
    pub pos: Position,
    pub message: String,
}

impl QueryError {
    fn new(kind: QueryErrorKind, pos: Position, message: impl Into<String>) -> Self {
        Self { kind, pos, message: message.into() }
    }
}

type QResult<T> = std::result::Result<T, QueryError>;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(u64),
    Real(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Colon,
    Dot,
    Star,
    Eq,
    Ge,
    Le,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(v) => write!(f, "`{v}`"),
            Tok::Real(v) => write!(f, "`{v}`"),
            Tok::Str(s) => write!(f, "'{s}'"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Ge => f.write_str("`>=`"),
            Tok::Le => f.write_str("`<=`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

fn lex(text: &str) -> QResult<Vec<(Tok, Position)>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1, 1);
    let advance = |c: char, line: &mut usize, column: &mut usize| {
        if c == '\n' {
            *line += 1;
            *column = 1;
        } else {
            *column += 1;
        }
    };
    while let Some(&c) = chars.peek() {
        let pos = Position { line, column };
        if c.is_whitespace() {
            chars.next();
            advance(c, &mut line, &mut column);
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            ':' => Some(Tok::Colon),
            '.' => Some(Tok::Dot),
            '*' => Some(Tok::Star),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(tok) = single {
            chars.next();
            advance(c, &mut line, &mut column);
            out.push((tok, pos));
            continue;
        }
        if c == '>' || c == '<' {
            chars.next();
            advance(c, &mut line, &mut column);
            if chars.peek() != Some(&'=') {
                return Err(QueryError::new(QueryErrorKind::Lexical, pos, format!("expected `{c}=`")));
            }
            chars.next();
            advance('=', &mut line, &mut column);
            out.push((if c == '>' { Tok::Ge } else { Tok::Le }, pos));
            continue;
        }
        if c == '\'' || c == '"' {
            chars.next();
            advance(c, &mut line, &mut column);
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some(q) if q == c => {
                        advance(q, &mut line, &mut column);
                        break;
                    }
                    Some(ch) => {
                        advance(ch, &mut line, &mut column);
                        s.push(ch);
                    }
                    None => {
                        return Err(QueryError::new(QueryErrorKind::Lexical, pos, "unterminated string literal"))
                    }
                }
            }
            out.push((Tok::Str(s), pos));
            continue;
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&d) = chars.peek() {
                if d.is_ascii_digit() || d == '.' {
                    s.push(d);
                    chars.next();
                    advance(d, &mut line, &mut column);
                } else {
                    break;
                }
            }
            let tok = if s.contains('.') {
                s.parse::<f64>().map(Tok::Real)
                    .map_err(|_| QueryError::new(QueryErrorKind::Lexical, pos, format!("malformed number `{s}`")))?
            } else {
                s.parse::<u64>().map(Tok::Int)
                    .map_err(|_| QueryError::new(QueryErrorKind::Lexical, pos, format!("integer `{s}` out of range")))?
            };
            out.push((tok, pos));
            continue;
        }
        if is_ident_start(c) {
            let mut s = String::new();
            while let Some(&d) = chars.peek() {
                if is_ident_char(d) {
                    s.push(d);
                    chars.next();
                    advance(d, &mut line, &mut column);
                } else {
                    break;
                }
            }
            out.push((Tok::Ident(s), pos));
            continue;
        }
        return Err(QueryError::new(QueryErrorKind::Lexical, pos, format!("unexpected character `{c}`")));
    }
    out.push((Tok::Eof, Position { line, column }));
    Ok(out)
}

const KEYWORDS: &[&str] = &[
    "SELECT", "FRAMES", "COUNT", "AVG", "WHERE", "AND", "ORDER", "IN", "OVERLAP", "WINDOW", "ADVANCE", "HOPPING",
    "HOPING", "SIZE", "BY", "LEFT", "RIGHT", "ABOVE", "BELOW",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
}

/// Names that can be printed bare and read back as a single identifier.
pub fn is_plain_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(is_ident_start) && chars.all(is_ident_char)
}

// Unresolved predicates, kept with positions for name resolution.
enum RawPred {
    Count { class: Option<(String, Position)>, cmp: Comparator, value: u32 },
    Decl { var: (String, Position), class: (String, Position), region: Option<RawRegion> },
    In { var: (String, Position), region: RawRegion },
    Attr { var: (String, Position), key: String, value: String },
    Order { subject: RawRef, target: RawRef, relation: SpatialRelation },
}

struct RawRegion {
    name: (String, Position),
    mode: RegionMode,
}

struct RawRef {
    name: (String, Position),
    class: Option<(String, Position)>,
}

struct Parser {
    toks: Vec<(Tok, Position)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Position {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Position) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn syntax<T>(&self, expected: &str) -> QResult<T> {
        Err(QueryError::new(QueryErrorKind::Syntax, self.pos(), format!("expected {expected}, found {}", self.peek())))
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> QResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.syntax(&format!("`{kw}`"))
        }
    }

    fn expect(&mut self, tok: Tok) -> QResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.syntax(&tok.to_string())
        }
    }

    fn name(&mut self, what: &str) -> QResult<(String, Position)> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                let pos = self.bump().1;
                Ok((s, pos))
            }
            _ => self.syntax(what),
        }
    }

    fn int(&mut self) -> QResult<u64> {
        match *self.peek() {
            Tok::Int(v) => {
                self.bump();
                Ok(v)
            }
            _ => self.syntax("an integer"),
        }
    }

    fn real(&mut self) -> QResult<f64> {
        match *self.peek() {
            Tok::Int(v) => {
                self.bump();
                Ok(v as f64)
            }
            Tok::Real(v) => {
                self.bump();
                Ok(v)
            }
            _ => self.syntax("a number"),
        }
    }

    fn select(&mut self) -> QResult<(RawSelect, Position)> {
        let pos = self.pos();
        if self.eat_kw("FRAMES") {
            return Ok((RawSelect::Frames, pos));
        }
        if self.eat_kw("COUNT") {
            return Ok((RawSelect::Count, pos));
        }
        if self.eat_kw("AVG") {
            self.expect(Tok::LParen)?;
            let class = self.name("a class name")?;
            self.expect(Tok::RParen)?;
            return Ok((RawSelect::Avg(class), pos));
        }
        self.syntax("FRAMES, COUNT or AVG(<class>)")
    }

    fn region_clause(&mut self) -> QResult<RawRegion> {
        let name = self.name("a region name")?;
        let mode = if self.eat_kw("OVERLAP") {
            let tau_pos = self.pos();
            let tau = self.real()?;
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(QueryError::new(QueryErrorKind::Syntax, tau_pos, format!("overlap fraction {tau} outside (0,1]")));
            }
            RegionMode::OverlapFraction(tau)
        } else {
            RegionMode::Center
        };
        Ok(RawRegion { name, mode })
    }

    fn var_ref(&mut self) -> QResult<RawRef> {
        let name = self.name("a variable or region name")?;
        let class = if *self.peek() == Tok::Colon {
            self.bump();
            Some(self.name("a class name")?)
        } else {
            None
        };
        Ok(RawRef { name, class })
    }

    fn relation(&mut self) -> QResult<SpatialRelation> {
        if let Tok::Ident(s) = self.peek() {
            if let Ok(rel) = s.parse::<SpatialRelation>() {
                self.bump();
                return Ok(rel);
            }
        }
        self.syntax("one of LEFT, RIGHT, ABOVE, BELOW")
    }

    fn comparator(&mut self) -> QResult<Comparator> {
        let cmp = match self.peek() {
            Tok::Eq => Comparator::Eq,
            Tok::Ge => Comparator::Ge,
            Tok::Le => Comparator::Le,
            _ => return self.syntax("`=`, `>=` or `<=`"),
        };
        self.bump();
        Ok(cmp)
    }

    fn predicate(&mut self) -> QResult<RawPred> {
        if self.eat_kw("COUNT") {
            self.expect(Tok::LParen)?;
            let class = if *self.peek() == Tok::Star {
                self.bump();
                None
            } else {
                Some(self.name("a class name or `*`")?)
            };
            self.expect(Tok::RParen)?;
            let cmp = self.comparator()?;
            let value_pos = self.pos();
            let value = u32::try_from(self.int()?)
                .map_err(|_| QueryError::new(QueryErrorKind::Syntax, value_pos, "count value too large"))?;
            return Ok(RawPred::Count { class, cmp, value });
        }
        if self.eat_kw("ORDER") {
            self.expect(Tok::LParen)?;
            let subject = self.var_ref()?;
            self.expect(Tok::Comma)?;
            let target = self.var_ref()?;
            self.expect(Tok::RParen)?;
            self.expect(Tok::Eq)?;
            let relation = self.relation()?;
            return Ok(RawPred::Order { subject, target, relation });
        }
        let var = self.name("a predicate")?;
        match self.peek() {
            Tok::Colon => {
                self.bump();
                let class = self.name("a class name")?;
                let region = if self.eat_kw("IN") { Some(self.region_clause()?) } else { None };
                Ok(RawPred::Decl { var, class, region })
            }
            Tok::Dot => {
                self.bump();
                let (key, _) = self.name("an attribute name")?;
                self.expect(Tok::Eq)?;
                let value = match self.peek().clone() {
                    Tok::Ident(s) | Tok::Str(s) => s,
                    Tok::Int(v) => v.to_string(),
                    Tok::Real(v) => v.to_string(),
                    _ => return self.syntax("an attribute value"),
                };
                self.bump();
                Ok(RawPred::Attr { var, key, value })
            }
            _ if self.at_kw("IN") => {
                self.bump();
                let region = self.region_clause()?;
                Ok(RawPred::In { var, region })
            }
            _ => self.syntax("`:`, `.` or IN after a variable"),
        }
    }

    fn window(&mut self) -> QResult<Option<(u64, u64, Position)>> {
        let pos = self.pos();
        if !self.eat_kw("WINDOW") {
            return Ok(None);
        }
        if self.eat_kw("HOPPING") || self.eat_kw("HOPING") {
            self.expect(Tok::LParen)?;
            self.expect_kw("SIZE")?;
            let size = self.int()?;
            self.expect(Tok::Comma)?;
            self.expect_kw("ADVANCE")?;
            self.eat_kw("BY");
            let advance = self.int()?;
            self.expect(Tok::RParen)?;
            return Ok(Some((size, advance, pos)));
        }
        let size = self.int()?;
        self.expect_kw("ADVANCE")?;
        self.eat_kw("BY");
        let advance = self.int()?;
        Ok(Some((size, advance, pos)))
    }
}

enum RawSelect {
    Frames,
    Count,
    Avg((String, Position)),
}

/// Parses `text`, resolving class names against `classes` and region names
/// against `regions`.
pub fn parse_query(text: &str, classes: &ClassTable, regions: &RegionSet) -> Result<QueryAst, QueryError> {
    if text.trim().is_empty() {
        return Err(QueryError::new(QueryErrorKind::Syntax, Position { line: 1, column: 1 }, "empty query"));
    }
    let mut p = Parser { toks: lex(text)?, at: 0 };
    p.expect_kw("SELECT")?;
    let (raw_select, select_pos) = p.select()?;
    let mut preds = Vec::new();
    if p.eat_kw("WHERE") {
        preds.push(p.predicate()?);
        while p.eat_kw("AND") {
            preds.push(p.predicate()?);
        }
    }
    let window = p.window()?;
    if *p.peek() != Tok::Eof {
        return p.syntax(if preds.is_empty() { "WHERE, WINDOW or end of input" } else { "AND, WINDOW or end of input" });
    }
    resolve(raw_select, select_pos, preds, window, classes, regions)
}

fn resolve(
    raw_select: RawSelect,
    select_pos: Position,
    preds: Vec<RawPred>,
    window: Option<(u64, u64, Position)>,
    classes: &ClassTable,
    regions: &RegionSet,
) -> QResult<QueryAst> {
    let class_id = |(name, pos): &(String, Position)| {
        classes
            .id(name)
            .ok_or_else(|| QueryError::new(QueryErrorKind::UnknownClass, *pos, format!("unknown class `{name}`")))
    };
    let region_name = |(name, pos): &(String, Position)| {
        regions
            .get(name)
            .map(|_| name.clone())
            .ok_or_else(|| QueryError::new(QueryErrorKind::UnknownRegion, *pos, format!("unknown region `{name}`")))
    };

    let select = match &raw_select {
        RawSelect::Frames => SelectKind::Frames,
        RawSelect::Count => SelectKind::CountFrames,
        RawSelect::Avg(c) => SelectKind::AvgClassCount(class_id(c)?),
    };

    // Declarations first, in order of appearance.
    let mut vars: Vec<VarDecl> = Vec::new();
    let mut declare = |(name, pos): &(String, Position), class: &(String, Position)| -> QResult<()> {
        let id = class_id(class)?;
        if regions.get(name).is_some() {
            return Err(QueryError::new(
                QueryErrorKind::ConflictingDeclaration,
                *pos,
                format!("variable `{name}` shadows a region"),
            ));
        }
        match vars.iter().find(|v| &v.name == name) {
            Some(v) if v.class_id != id => Err(QueryError::new(
                QueryErrorKind::ConflictingDeclaration,
                *pos,
                format!("variable `{name}` already declared with another class"),
            )),
            Some(_) => Ok(()),
            None => {
                vars.push(VarDecl { name: name.clone(), class_id: id, attrs: Vec::new() });
                Ok(())
            }
        }
    };
    for pred in &preds {
        match pred {
            RawPred::Decl { var, class, .. } => declare(var, class)?,
            RawPred::Order { subject, target, .. } => {
                for r in [subject, target] {
                    if let Some(c) = &r.class {
                        declare(&r.name, c)?;
                    }
                }
            }
            _ => {}
        }
    }

    let declared = |vars: &[VarDecl], (name, pos): &(String, Position)| {
        if vars.iter().any(|v| &v.name == name) {
            Ok(name.clone())
        } else {
            Err(QueryError::new(QueryErrorKind::UndeclaredVariable, *pos, format!("undeclared variable `{name}`")))
        }
    };

    let mut count_preds = Vec::new();
    let mut region_preds = Vec::new();
    let mut spatial_preds = Vec::new();
    for pred in preds {
        match pred {
            RawPred::Count { class, cmp, value } => {
                let class_id = class.as_ref().map(&class_id).transpose()?;
                count_preds.push(CountPredicate::new(class_id, cmp, value));
            }
            RawPred::Decl { var, region, .. } => {
                if let Some(r) = region {
                    region_preds.push(RegionPred { var: var.0, region: region_name(&r.name)?, mode: r.mode });
                }
            }
            RawPred::In { var, region } => {
                let var = declared(&vars, &var)?;
                region_preds.push(RegionPred { var, region: region_name(&region.name)?, mode: region.mode });
            }
            RawPred::Attr { var, key, value } => {
                let name = declared(&vars, &var)?;
                let decl = vars.iter_mut().find(|v| v.name == name).expect("declared");
                decl.attrs.push(AttrConstraint { key, value });
            }
            RawPred::Order { subject, target, relation } => {
                let subject = declared(&vars, &subject.name)?;
                let target = if target.class.is_some() || vars.iter().any(|v| v.name == target.name.0) {
                    SpatialTarget::Var(target.name.0)
                } else if regions.get(&target.name.0).is_some() {
                    SpatialTarget::Region(target.name.0)
                } else {
                    return Err(QueryError::new(
                        QueryErrorKind::UndeclaredVariable,
                        target.name.1,
                        format!("`{}` is neither a declared variable nor a region", target.name.0),
                    ));
                };
                spatial_preds.push(SpatialPred { subject, target, relation });
            }
        }
    }

    let window = match (window, select) {
        (None, SelectKind::Frames) => None,
        (Some((_, _, pos)), SelectKind::Frames) => {
            return Err(QueryError::new(QueryErrorKind::Shape, pos, "SELECT FRAMES takes no WINDOW"))
        }
        (None, _) => {
            return Err(QueryError::new(QueryErrorKind::Shape, select_pos, "aggregate queries require a WINDOW"))
        }
        (Some((size, advance, pos)), _) => Some(WindowSpec::new(size, advance).ok_or_else(|| {
            QueryError::new(QueryErrorKind::Shape, pos, format!("window needs size >= advance >= 1, got {size}/{advance}"))
        })?),
    };

    Ok(QueryAst { select, vars, count_preds, region_preds, spatial_preds, window })
}

fn write_value(out: &mut String, v: &str) {
    if is_plain_identifier(v) && !is_keyword(v) {
        out.push_str(v);
    } else {
        out.push('\'');
        out.push_str(v);
        out.push('\'');
    }
}

fn write_region_mode(out: &mut String, mode: RegionMode) {
    if let RegionMode::OverlapFraction(t) = mode {
        // `{:?}` keeps a decimal point so the lexer reads a real back.
        out.push_str(&format!(" OVERLAP {t:?}"));
    }
}

/// Canonical text for `ast`; [`parse_query`] reads it back to an equal AST.
pub fn print_query(ast: &QueryAst, classes: &ClassTable) -> String {
    let label = |id: ClassId| classes.label(id).unwrap_or("?").to_string();
    let mut out = String::from("SELECT ");
    match ast.select {
        SelectKind::Frames => out.push_str("FRAMES"),
        SelectKind::CountFrames => out.push_str("COUNT"),
        SelectKind::AvgClassCount(c) => out.push_str(&format!("AVG({})", label(c))),
    }
    let mut preds: Vec<String> = Vec::new();
    for v in &ast.vars {
        preds.push(format!("{}:{}", v.name, label(v.class_id)));
    }
    for v in &ast.vars {
        for a in &v.attrs {
            let mut s = format!("{}.{} = ", v.name, a.key);
            write_value(&mut s, &a.value);
            preds.push(s);
        }
    }
    for c in &ast.count_preds {
        let class = c.class_id.map_or_else(|| "*".to_string(), label);
        preds.push(format!("COUNT({class}) {} {}", c.comparator.symbol(), c.value));
    }
    for r in &ast.region_preds {
        let mut s = format!("{} IN {}", r.var, r.region);
        write_region_mode(&mut s, r.mode);
        preds.push(s);
    }
    for sp in &ast.spatial_preds {
        let target = match &sp.target {
            SpatialTarget::Var(v) | SpatialTarget::Region(v) => v,
        };
        preds.push(format!("ORDER({}, {}) = {}", sp.subject, target, sp.relation));
    }
    if !preds.is_empty() {
        out.push_str(" WHERE ");
        out.push_str(&preds.join(" AND "));
    }
    if let Some(w) = ast.window {
        out.push_str(&format!(" WINDOW {} ADVANCE {}", w.size, w.advance));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> ClassTable {
        ClassTable::new(["person", "car", "bus", "truck"]).unwrap()
    }

    fn parse(text: &str) -> QResult<QueryAst> {
        parse_query(text, &classes(), &RegionSet::default())
    }

    #[test]
    fn minimal_frames_query() {
        let q = parse("SELECT FRAMES WHERE COUNT(person) = 2").unwrap();
        assert_eq!(q.select, SelectKind::Frames);
        assert_eq!(q.count_preds, vec![CountPredicate::new(Some(ClassId(0)), Comparator::Eq, 2)]);
        assert!(q.vars.is_empty() && q.window.is_none());
        assert!(q.is_count_only());
    }

    #[test]
    fn declared_variables_and_window() {
        let q = parse(
            "SELECT COUNT WHERE a:car AND b:person AND ORDER(a,b) = RIGHT AND COUNT(car)=1 AND COUNT(person)=1 \
             WINDOW 5000 ADVANCE 5000",
        )
        .unwrap();
        assert_eq!(q.select, SelectKind::CountFrames);
        assert_eq!(q.vars.len(), 2);
        assert_eq!(q.vars[0].class_id, ClassId(1));
        assert_eq!(
            q.spatial_preds,
            vec![SpatialPred { subject: "a".into(), target: SpatialTarget::Var("b".into()), relation: SpatialRelation::Right }]
        );
        assert_eq!(q.window, Some(WindowSpec { size: 5000, advance: 5000 }));
    }

    #[test]
    fn declarations_may_follow_use() {
        let q = parse("SELECT FRAMES WHERE ORDER(a,b) = LEFT AND a:car AND b:bus").unwrap();
        assert_eq!(q.vars.iter().map(|v| v.name.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn hopping_window_spellings() {
        for kw in ["HOPPING", "HOPING", "hoping"] {
            let q = parse(&format!("SELECT COUNT WHERE COUNT(*) >= 1 WINDOW {kw} (SIZE 5000, ADVANCE BY 2500)")).unwrap();
            assert_eq!(q.window, Some(WindowSpec { size: 5000, advance: 2500 }));
        }
    }

    #[test]
    fn invalid_relation_names_token() {
        let err = parse("SELECT FRAMES WHERE ORDER(a:car,b:bus)=SIDEWAYS").unwrap_err();
        assert_eq!(err.kind, QueryErrorKind::Syntax);
        assert!(err.message.contains("SIDEWAYS"), "{err}");
        assert_eq!(err.pos, Position { line: 1, column: 40 });
    }

    #[test]
    fn error_kinds_are_distinct() {
        assert_eq!(parse("SELECT FRAMES WHERE COUNT(person) = #").unwrap_err().kind, QueryErrorKind::Lexical);
        assert_eq!(parse("SELECT FRAMES WHERE COUNT(cat) = 1").unwrap_err().kind, QueryErrorKind::UnknownClass);
        assert_eq!(parse("SELECT FRAMES WHERE c:car IN moon").unwrap_err().kind, QueryErrorKind::UnknownRegion);
        assert_eq!(parse("SELECT FRAMES WHERE ORDER(a, b) = LEFT").unwrap_err().kind, QueryErrorKind::UndeclaredVariable);
        assert_eq!(
            parse("SELECT FRAMES WHERE a:car AND a:bus").unwrap_err().kind,
            QueryErrorKind::ConflictingDeclaration
        );
        assert_eq!(parse("SELECT COUNT WHERE COUNT(*) = 1").unwrap_err().kind, QueryErrorKind::Shape);
        assert_eq!(
            parse("SELECT FRAMES WHERE COUNT(*) = 1 WINDOW 10 ADVANCE 10").unwrap_err().kind,
            QueryErrorKind::Shape
        );
        assert_eq!(parse("SELECT COUNT WHERE COUNT(*) = 1 WINDOW 10 ADVANCE 20").unwrap_err().kind, QueryErrorKind::Shape);
        assert_eq!(parse("SELECT FRAMES WHERE").unwrap_err().kind, QueryErrorKind::Syntax);
        assert_eq!(parse("   ").unwrap_err().kind, QueryErrorKind::Syntax);
    }

    #[test]
    fn multiline_positions() {
        let err = parse("SELECT FRAMES\nWHERE COUNT(cat) = 1").unwrap_err();
        assert_eq!(err.pos, Position { line: 2, column: 13 });
    }

    #[test]
    fn region_and_overlap_clauses() {
        let q = parse("SELECT FRAMES WHERE c:car IN lower_right OVERLAP 0.5 AND c IN lower_left").unwrap();
        assert_eq!(q.region_preds[0].mode, RegionMode::OverlapFraction(0.5));
        assert_eq!(q.region_preds[1].mode, RegionMode::Center);
        assert!(parse("SELECT FRAMES WHERE c:car IN lower_right OVERLAP 1.5").is_err());
    }

    #[test]
    fn order_against_region() {
        let q = parse("SELECT FRAMES WHERE ORDER(c:car, upper_left) = ABOVE").unwrap();
        assert_eq!(q.spatial_preds[0].target, SpatialTarget::Region("upper_left".into()));
    }

    #[test]
    fn attribute_constraints() {
        let q = parse("SELECT FRAMES WHERE c:car AND c.color = red AND c.plate = 'AB 12'").unwrap();
        assert_eq!(q.vars[0].attrs.len(), 2);
        assert_eq!(q.vars[0].attrs[1].value, "AB 12");
    }

    #[test]
    fn avg_query() {
        let q = parse("SELECT AVG(car) WHERE COUNT(*) >= 0 WINDOW 100 ADVANCE 50").unwrap();
        assert_eq!(q.select, SelectKind::AvgClassCount(ClassId(1)));
    }

    #[test]
    fn print_round_trips_examples() {
        for text in [
            "SELECT FRAMES WHERE COUNT(person) = 2",
            "SELECT COUNT WHERE ORDER(a:car, b:person) = RIGHT AND COUNT(car) = 1 WINDOW 5000 ADVANCE 5000",
            "SELECT FRAMES WHERE c:car IN lower_right OVERLAP 1 AND c.color = 'dark red'",
            "SELECT AVG(bus) WINDOW 10 ADVANCE 5",
        ] {
            let q = parse(text).unwrap();
            let printed = print_query(&q, &classes());
            assert_eq!(parse(&printed).unwrap(), q, "{printed}");
        }
    }

    #[test]
    fn printed_window_clause() {
        let q = parse("SELECT COUNT WHERE COUNT(*) >= 1 WINDOW HOPPING (SIZE 20, ADVANCE BY 10)").unwrap();
        assert!(print_query(&q, &classes()).ends_with("WINDOW 20 ADVANCE 10"));
    }
}
