//! The `.kgr` rulebase language.
//!
//! ```text
//! # comment
//! var PoleAngle = state[2] deg
//! set NE on PoleAngle = linear(-0.0666, 0)
//! set SM on PoleAngle = tri(-6, 0, 6)
//! set WIDE on PoleAngle = trap(-10, -5, 5, 10)
//! action p
//! action n
//! rule: if PoleAngle is NE and PoleVelocityAtTip is NE then n
//! ```
//!
//! Continuous rulebases declare `dim <name> conclude <set>` instead of
//! actions, and conclude with `then <dim>` (the declared set) or
//! `then <dim> is <set>`. The optional `deg` suffix on a variable converts the
//! environment's radians into degrees before membership evaluation.
//!
//! Parsing never panics; every problem is reported as a [`Diagnostic`] with a
//! line and column.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::envs::{ActionSpace, EnvSpec};
use crate::fuzzy::{FuzzySet, MembershipFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    Lexical,
    Syntax,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// 1-based; 0 when the rulebase was not parsed from text.
    pub line: usize,
    pub column: usize,
    /// 1-based rule number for rule-level problems.
    pub rule: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DiagnosticKind::Lexical => "lexical error",
            DiagnosticKind::Syntax => "syntax error",
            DiagnosticKind::Semantic => "error",
        };
        write!(f, "{}:{}: {kind}", self.line, self.column)?;
        if let Some(r) = self.rule {
            write!(f, " in rule {r}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    pub fn iter(&self) -> impl Iterator<Item = &Diagnostic> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Diagnostics {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    /// Use the state value as is.
    Native,
    /// The state is in radians; rules are written in degrees.
    Degrees,
}

impl Unit {
    pub fn convert(self, raw: f64) -> f64 {
        match self {
            Unit::Native => raw,
            Unit::Degrees => raw.to_degrees(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub index: usize,
    pub unit: Unit,
}

/// A fuzzy set attached to a variable or a continuous action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SetDecl {
    pub on: String,
    pub set: FuzzySet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimDecl {
    pub name: String,
    /// Default conclusion set for `then <dim>`.
    pub conclude: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionDecls {
    Discrete(Vec<String>),
    Continuous(Vec<DimDecl>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Precondition {
    pub variable: String,
    pub set: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Conclusion {
    Action(String),
    /// `set: None` uses the dimension's declared conclusion set.
    Dimension { dim: String, set: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub preconditions: Vec<Precondition>,
    pub conclusion: Conclusion,
}

impl Rule {
    /// Number of preconditions `k`.
    pub fn k(&self) -> usize {
        self.preconditions.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Loc {
    pub line: usize,
    pub column: usize,
}

/// Declaration positions, kept out of structural equality.
#[derive(Debug, Clone, Default)]
pub struct SourceMap {
    pub variables: Vec<Loc>,
    pub sets: Vec<Loc>,
    pub actions: Vec<Loc>,
    pub rules: Vec<Loc>,
}

#[derive(Debug, Clone)]
pub struct RuleBase {
    pub variables: Vec<Variable>,
    pub sets: Vec<SetDecl>,
    pub actions: ActionDecls,
    pub rules: Vec<Rule>,
    pub source: SourceMap,
}

impl PartialEq for RuleBase {
    fn eq(&self, other: &Self) -> bool {
        self.variables == other.variables
            && self.sets == other.sets
            && self.actions == other.actions
            && self.rules == other.rules
    }
}

impl Default for RuleBase {
    fn default() -> Self {
        Self {
            variables: Vec::new(),
            sets: Vec::new(),
            actions: ActionDecls::Discrete(Vec::new()),
            rules: Vec::new(),
            source: SourceMap::default(),
        }
    }
}

impl RuleBase {
    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn set(&self, on: &str, name: &str) -> Option<&FuzzySet> {
        self.sets
            .iter()
            .find(|s| s.on == on && s.set.name == name)
            .map(|s| &s.set)
    }

    /// Set names declared on a variable or dimension, in declaration order.
    pub fn vocabulary(&self, on: &str) -> Vec<&str> {
        self.sets
            .iter()
            .filter(|s| s.on == on)
            .map(|s| s.set.name.as_str())
            .collect()
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.actions, ActionDecls::Continuous(_))
    }

    fn dim(&self, name: &str) -> Option<&DimDecl> {
        match &self.actions {
            ActionDecls::Continuous(dims) => dims.iter().find(|d| d.name == name),
            ActionDecls::Discrete(_) => None,
        }
    }

    /// Conclusion set of a continuous rule.
    pub fn conclusion_set(&self, rule: &Rule) -> Option<&FuzzySet> {
        match &rule.conclusion {
            Conclusion::Action(_) => None,
            Conclusion::Dimension { dim, set } => {
                let name = match set {
                    Some(s) => s.as_str(),
                    None => self.dim(dim)?.conclude.as_str(),
                };
                self.set(dim, name)
            }
        }
    }

    fn rule_loc(&self, i: usize) -> Loc {
        self.source.rules.get(i).copied().unwrap_or_default()
    }
}

// ---------------------------------------------------------------------------
// lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Sym(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    column: usize,
}

fn lex_line(line: &str, lineno: usize) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                column,
            });
            continue;
        }
        let starts_number = c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
            || ((c == '-' || c == '+')
                && chars
                    .get(i + 1)
                    .is_some_and(|d| d.is_ascii_digit() || *d == '.'));
        if starts_number {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let text: String = chars[start..i].iter().collect();
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(Token {
                    tok: Tok::Number(v),
                    column,
                }),
                _ => {
                    return Err(Diagnostic {
                        kind: DiagnosticKind::Lexical,
                        line: lineno,
                        column,
                        rule: None,
                        message: format!("malformed number `{text}`"),
                    })
                }
            }
            continue;
        }
        if matches!(c, '=' | '[' | ']' | '(' | ')' | ',' | ':') {
            out.push(Token {
                tok: Tok::Sym(c),
                column,
            });
            i += 1;
            continue;
        }
        return Err(Diagnostic {
            kind: DiagnosticKind::Lexical,
            line: lineno,
            column,
            rule: None,
            message: format!("unexpected character {c:?}"),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// parser

struct LineParser<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    end_column: usize,
    rule: Option<usize>,
}

type PResult<T> = Result<T, Diagnostic>;

impl<'a> LineParser<'a> {
    fn column(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_column, |t| t.column)
    }

    fn err<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(Diagnostic {
            kind: DiagnosticKind::Syntax,
            line: self.line,
            column: self.column(),
            rule: self.rule,
            message: message.into(),
        })
    }

    fn describe(&self) -> String {
        match self.toks.get(self.pos).map(|t| &t.tok) {
            None => "end of line".into(),
            Some(Tok::Ident(s)) => format!("`{s}`"),
            Some(Tok::Number(v)) => format!("number {v}"),
            Some(Tok::Sym(c)) => format!("`{c}`"),
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Loc)> {
        let loc = Loc {
            line: self.line,
            column: self.column(),
        };
        match self.toks.get(self.pos).map(|t| &t.tok) {
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok((s.clone(), loc))
            }
            _ => self.err(format!("expected {what}, found {}", self.describe())),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        match self.toks.get(self.pos).map(|t| &t.tok) {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(format!("expected `{kw}`, found {}", self.describe())),
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.toks.get(self.pos).map(|t| &t.tok), Some(Tok::Ident(s)) if s == kw)
    }

    fn sym(&mut self, c: char) -> PResult<()> {
        match self.toks.get(self.pos).map(|t| &t.tok) {
            Some(Tok::Sym(s)) if *s == c => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(format!("expected `{c}`, found {}", self.describe())),
        }
    }

    fn number(&mut self) -> PResult<f64> {
        match self.toks.get(self.pos).map(|t| &t.tok) {
            Some(Tok::Number(v)) => {
                self.pos += 1;
                Ok(*v)
            }
            _ => self.err(format!("expected a number, found {}", self.describe())),
        }
    }

    fn index(&mut self) -> PResult<usize> {
        let column = self.column();
        let v = self.number()?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Diagnostic {
                kind: DiagnosticKind::Syntax,
                line: self.line,
                column,
                rule: self.rule,
                message: format!("state index must be a non-negative integer, got {v}"),
            });
        }
        Ok(v as usize)
    }

    fn args(&mut self, n: usize) -> PResult<Vec<f64>> {
        self.sym('(')?;
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                self.sym(',')?;
            }
            v.push(self.number()?);
        }
        self.sym(')')?;
        Ok(v)
    }

    fn end(&self) -> PResult<()> {
        if self.pos < self.toks.len() {
            self.err(format!("unexpected {} at end of declaration", self.describe()))
        } else {
            Ok(())
        }
    }

    fn membership(&mut self) -> PResult<MembershipFunction> {
        let shape_col = self.column();
        let (shape, _) = self.ident("a membership shape (linear, tri, trap)")?;
        match shape.as_str() {
            "linear" => {
                let a = self.args(2)?;
                Ok(MembershipFunction::Linear { a: a[0], b: a[1] })
            }
            "tri" => {
                let a = self.args(3)?;
                Ok(MembershipFunction::Triangle {
                    left: a[0],
                    peak: a[1],
                    right: a[2],
                })
            }
            "trap" => {
                let a = self.args(4)?;
                Ok(MembershipFunction::Trapezoid {
                    left_foot: a[0],
                    left_shoulder: a[1],
                    right_shoulder: a[2],
                    right_foot: a[3],
                })
            }
            other => Err(Diagnostic {
                kind: DiagnosticKind::Syntax,
                line: self.line,
                column: shape_col,
                rule: self.rule,
                message: format!("unknown membership shape `{other}`"),
            }),
        }
    }
}

enum Decl {
    Var(Variable, Loc),
    Set(SetDecl, Loc, Loc),
    Action(String, Loc),
    Dim(DimDecl, Loc, Loc),
    Rule(ParsedRule),
}

struct ParsedRule {
    rule: Rule,
    loc: Loc,
    pre_locs: Vec<(Loc, Loc)>,
    concl_loc: Loc,
    concl_set_loc: Option<Loc>,
}

fn parse_line(toks: &[Token], line: usize, width: usize, rule_no: usize) -> PResult<Option<Decl>> {
    if toks.is_empty() {
        return Ok(None);
    }
    let mut p = LineParser {
        toks,
        pos: 0,
        line,
        end_column: width + 1,
        rule: None,
    };
    let start = Loc {
        line,
        column: p.column(),
    };
    let (kw, _) = p.ident("a declaration keyword")?;
    let decl = match kw.as_str() {
        "var" => {
            let (name, _) = p.ident("a variable name")?;
            p.sym('=')?;
            p.keyword("state")?;
            p.sym('[')?;
            let index = p.index()?;
            p.sym(']')?;
            let unit = if p.peek_keyword("deg") {
                p.pos += 1;
                Unit::Degrees
            } else {
                Unit::Native
            };
            Decl::Var(Variable { name, index, unit }, start)
        }
        "set" => {
            let (name, _) = p.ident("a set name")?;
            p.keyword("on")?;
            let (on, on_loc) = p.ident("a variable or dimension name")?;
            p.sym('=')?;
            let mf = p.membership()?;
            Decl::Set(SetDecl { on, set: FuzzySet::new(name, mf) }, start, on_loc)
        }
        "action" => {
            let (label, _) = p.ident("an action label")?;
            Decl::Action(label, start)
        }
        "dim" => {
            let (name, _) = p.ident("a dimension name")?;
            p.keyword("conclude")?;
            let (conclude, set_loc) = p.ident("a conclusion set name")?;
            Decl::Dim(DimDecl { name, conclude }, start, set_loc)
        }
        "rule" => {
            p.rule = Some(rule_no);
            p.sym(':')?;
            p.keyword("if")?;
            let mut preconditions = Vec::new();
            let mut pre_locs = Vec::new();
            loop {
                let (variable, vloc) = p.ident("a variable name")?;
                p.keyword("is")?;
                let (set, sloc) = p.ident("a set name")?;
                preconditions.push(Precondition { variable, set });
                pre_locs.push((vloc, sloc));
                if p.peek_keyword("and") {
                    p.pos += 1;
                    continue;
                }
                break;
            }
            p.keyword("then")?;
            let (target, concl_loc) = p.ident("an action label or dimension name")?;
            let (conclusion, concl_set_loc) = if p.peek_keyword("is") {
                p.pos += 1;
                let (set, sloc) = p.ident("a conclusion set name")?;
                (
                    Conclusion::Dimension {
                        dim: target,
                        set: Some(set),
                    },
                    Some(sloc),
                )
            } else {
                // resolved against the declarations once the whole file is read
                (Conclusion::Action(target), None)
            };
            Decl::Rule(ParsedRule {
                rule: Rule {
                    preconditions,
                    conclusion,
                },
                loc: start,
                pre_locs,
                concl_loc,
                concl_set_loc,
            })
        }
        other => {
            p.pos = 0;
            return p.err(format!(
                "unknown declaration `{other}` (expected var, set, action, dim or rule)"
            ));
        }
    };
    p.end()?;
    Ok(Some(decl))
}

fn semantic(loc: Loc, rule: Option<usize>, message: String) -> Diagnostic {
    Diagnostic {
        kind: DiagnosticKind::Semantic,
        line: loc.line,
        column: loc.column,
        rule,
        message,
    }
}

/// Parses raw bytes, reporting invalid UTF-8 as a lexical diagnostic.
pub fn parse_rulebase_bytes(bytes: &[u8]) -> Result<RuleBase, Diagnostics> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_rulebase(text),
        Err(e) => {
            let valid = &bytes[..e.valid_up_to()];
            let line = valid.iter().filter(|&&b| b == b'\n').count() + 1;
            let line_start = valid.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            let column = String::from_utf8_lossy(&valid[line_start..]).chars().count() + 1;
            Err(Diagnostics(vec![Diagnostic {
                kind: DiagnosticKind::Lexical,
                line,
                column,
                rule: None,
                message: "invalid UTF-8".into(),
            }]))
        }
    }
}

pub fn parse_rulebase(text: &str) -> Result<RuleBase, Diagnostics> {
    let mut diags = Vec::new();
    let mut decls = Vec::new();
    let mut rule_no = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let toks = match lex_line(line, lineno) {
            Ok(t) => t,
            Err(d) => {
                diags.push(d);
                continue;
            }
        };
        if matches!(toks.first().map(|t| &t.tok), Some(Tok::Ident(s)) if s == "rule") {
            rule_no += 1;
        }
        match parse_line(&toks, lineno, line.chars().count(), rule_no) {
            Ok(Some(d)) => decls.push(d),
            Ok(None) => {}
            Err(d) => diags.push(d),
        }
    }

    let mut rb = RuleBase::default();
    let mut labels = Vec::new();
    let mut dims = Vec::new();
    let mut dim_locs = Vec::new();
    let mut parsed_rules = Vec::new();
    let mut first_action: Option<Loc> = None;
    let mut first_dim: Option<Loc> = None;
    let mut set_target_locs = Vec::new();

    for d in decls {
        match d {
            Decl::Var(v, loc) => {
                if rb.variable(&v.name).is_some() {
                    diags.push(semantic(loc, None, format!("variable `{}` declared twice", v.name)));
                    continue;
                }
                rb.variables.push(v);
                rb.source.variables.push(loc);
            }
            Decl::Set(s, loc, on_loc) => {
                if rb.set(&s.on, &s.set.name).is_some() {
                    diags.push(semantic(
                        loc,
                        None,
                        format!("set `{}` declared twice on `{}`", s.set.name, s.on),
                    ));
                    continue;
                }
                if !s.set.mf.is_well_formed() {
                    diags.push(semantic(
                        loc,
                        None,
                        format!("set `{}` has decreasing breakpoints", s.set.name),
                    ));
                }
                rb.sets.push(s);
                rb.source.sets.push(loc);
                set_target_locs.push(on_loc);
            }
            Decl::Action(label, loc) => {
                first_action.get_or_insert(loc);
                if labels.contains(&label) {
                    diags.push(semantic(loc, None, format!("action `{label}` declared twice")));
                    continue;
                }
                labels.push(label);
                rb.source.actions.push(loc);
            }
            Decl::Dim(dim, loc, set_loc) => {
                first_dim.get_or_insert(loc);
                if dims.iter().any(|d: &DimDecl| d.name == dim.name) {
                    diags.push(semantic(loc, None, format!("dimension `{}` declared twice", dim.name)));
                    continue;
                }
                dims.push(dim);
                dim_locs.push((loc, set_loc));
                rb.source.actions.push(loc);
            }
            Decl::Rule(r) => parsed_rules.push(r),
        }
    }

    if let (Some(_), Some(dloc)) = (first_action, first_dim) {
        diags.push(semantic(
            dloc,
            None,
            "a rulebase declares either discrete actions or continuous dimensions, not both".into(),
        ));
    }
    rb.actions = if dims.is_empty() {
        ActionDecls::Discrete(labels)
    } else {
        ActionDecls::Continuous(dims)
    };

    for (s, loc) in rb.sets.iter().zip(&set_target_locs) {
        if rb.variable(&s.on).is_none() && rb.dim(&s.on).is_none() {
            diags.push(semantic(
                *loc,
                None,
                format!("set `{}` is attached to undeclared `{}`", s.set.name, s.on),
            ));
        }
    }
    if let ActionDecls::Continuous(dims) = &rb.actions {
        for (d, (_, set_loc)) in dims.iter().zip(&dim_locs) {
            check_conclusion_set(&rb, &d.name, &d.conclude, *set_loc, None, &mut diags);
        }
    }

    for (i, mut pr) in parsed_rules.into_iter().enumerate() {
        let no = Some(i + 1);
        for (pre, (vloc, sloc)) in pr.rule.preconditions.iter().zip(&pr.pre_locs) {
            if rb.variable(&pre.variable).is_none() {
                diags.push(semantic(*vloc, no, format!("undeclared variable `{}`", pre.variable)));
            } else if rb.set(&pre.variable, &pre.set).is_none() {
                diags.push(semantic(
                    *sloc,
                    no,
                    format!("undeclared set `{}` for variable `{}`", pre.set, pre.variable),
                ));
            }
        }
        let mut seen = HashSet::new();
        for (pre, (vloc, _)) in pr.rule.preconditions.iter().zip(&pr.pre_locs) {
            if !seen.insert(pre.variable.as_str()) {
                diags.push(semantic(
                    *vloc,
                    no,
                    format!("variable `{}` appears twice in one rule", pre.variable),
                ));
            }
        }
        match (&rb.actions, &mut pr.rule.conclusion) {
            (ActionDecls::Discrete(labels), Conclusion::Action(label)) => {
                if !labels.contains(label) {
                    diags.push(semantic(pr.concl_loc, no, format!("undeclared action `{label}`")));
                }
            }
            (ActionDecls::Continuous(dims), c) => {
                let (dim, set) = match c {
                    Conclusion::Action(target) => {
                        let dim = target.clone();
                        *c = Conclusion::Dimension { dim: dim.clone(), set: None };
                        (dim, None)
                    }
                    Conclusion::Dimension { dim, set } => (dim.clone(), set.clone()),
                };
                match dims.iter().find(|d| d.name == dim) {
                    None => {
                        diags.push(semantic(pr.concl_loc, no, format!("undeclared dimension `{dim}`")))
                    }
                    Some(_) => {
                        if let Some(set) = set {
                            let loc = pr.concl_set_loc.unwrap_or(pr.concl_loc);
                            check_conclusion_set(&rb, &dim, &set, loc, no, &mut diags);
                        }
                    }
                }
            }
            (ActionDecls::Discrete(_), Conclusion::Dimension { dim, .. }) => {
                diags.push(semantic(
                    pr.concl_loc,
                    no,
                    format!("`then {dim} is ...` needs a declared continuous dimension"),
                ));
            }
        }
        rb.rules.push(pr.rule);
        rb.source.rules.push(pr.loc);
    }

    if diags.is_empty() {
        Ok(rb)
    } else {
        diags.sort_by_key(|d| (d.line, d.column));
        Err(Diagnostics(diags))
    }
}

fn check_conclusion_set(
    rb: &RuleBase,
    dim: &str,
    set: &str,
    loc: Loc,
    rule: Option<usize>,
    diags: &mut Vec<Diagnostic>,
) {
    match rb.set(dim, set) {
        None => diags.push(semantic(
            loc,
            rule,
            format!("undeclared conclusion set `{set}` on dimension `{dim}`"),
        )),
        Some(s) if !s.mf.is_monotone() => diags.push(semantic(
            loc,
            rule,
            format!("conclusion set `{set}` must be a monotone linear function"),
        )),
        Some(_) => {}
    }
}

/// Checks a rulebase against an environment's state and action spaces.
pub fn validate_rulebase(rb: &RuleBase, env: &EnvSpec) -> Result<(), Diagnostics> {
    let mut diags = Vec::new();
    for (i, v) in rb.variables.iter().enumerate() {
        if v.index >= env.state_dim {
            let loc = rb.source.variables.get(i).copied().unwrap_or_default();
            diags.push(semantic(
                loc,
                None,
                format!(
                    "variable `{}` reads state[{}] but `{}` has {} state dimensions",
                    v.name, v.index, env.id, env.state_dim
                ),
            ));
        }
    }
    let action_loc = |i: usize| rb.source.actions.get(i).copied().unwrap_or_default();
    match (&rb.actions, &env.action_space) {
        (ActionDecls::Discrete(labels), ActionSpace::Discrete { labels: env_labels }) => {
            for (i, l) in labels.iter().enumerate() {
                if !env_labels.contains(l) {
                    diags.push(semantic(
                        action_loc(i),
                        None,
                        format!("action `{l}` is not one of {env_labels:?} in `{}`", env.id),
                    ));
                }
            }
        }
        (ActionDecls::Continuous(dims), ActionSpace::Continuous { dims: env_dims }) => {
            for (i, d) in dims.iter().enumerate() {
                if !env_dims.iter().any(|e| e.name == d.name) {
                    diags.push(semantic(
                        action_loc(i),
                        None,
                        format!("dimension `{}` does not exist in `{}`", d.name, env.id),
                    ));
                }
            }
        }
        (ActionDecls::Discrete(labels), ActionSpace::Continuous { .. }) if !labels.is_empty() || !rb.rules.is_empty() => {
            let loc = if labels.is_empty() { rb.rule_loc(0) } else { action_loc(0) };
            diags.push(semantic(
                loc,
                None,
                format!("discrete rulebase used with continuous-action environment `{}`", env.id),
            ));
        }
        (ActionDecls::Continuous(_), ActionSpace::Discrete { .. }) => {
            diags.push(semantic(
                action_loc(0),
                None,
                format!("continuous rulebase used with discrete-action environment `{}`", env.id),
            ));
        }
        _ => {}
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(Diagnostics(diags))
    }
}

fn mf_text(mf: &MembershipFunction) -> String {
    match *mf {
        MembershipFunction::Linear { a, b } => format!("linear({a}, {b})"),
        MembershipFunction::Triangle { left, peak, right } => format!("tri({left}, {peak}, {right})"),
        MembershipFunction::Trapezoid {
            left_foot,
            left_shoulder,
            right_shoulder,
            right_foot,
        } => format!("trap({left_foot}, {left_shoulder}, {right_shoulder}, {right_foot})"),
    }
}

/// Canonical text: variables, sets, actions or dimensions, then rules.
pub fn serialize_rulebase(rb: &RuleBase) -> String {
    let mut out = String::new();
    for v in &rb.variables {
        let unit = match v.unit {
            Unit::Native => "",
            Unit::Degrees => " deg",
        };
        out.push_str(&format!("var {} = state[{}]{unit}\n", v.name, v.index));
    }
    for s in &rb.sets {
        out.push_str(&format!("set {} on {} = {}\n", s.set.name, s.on, mf_text(&s.set.mf)));
    }
    match &rb.actions {
        ActionDecls::Discrete(labels) => {
            for l in labels {
                out.push_str(&format!("action {l}\n"));
            }
        }
        ActionDecls::Continuous(dims) => {
            for d in dims {
                out.push_str(&format!("dim {} conclude {}\n", d.name, d.conclude));
            }
        }
    }
    for r in &rb.rules {
        let pre: Vec<String> = r
            .preconditions
            .iter()
            .map(|p| format!("{} is {}", p.variable, p.set))
            .collect();
        let concl = match &r.conclusion {
            Conclusion::Action(a) => a.clone(),
            Conclusion::Dimension { dim, set: None } => dim.clone(),
            Conclusion::Dimension { dim, set: Some(s) } => format!("{dim} is {s}"),
        };
        out.push_str(&format!("rule: if {} then {concl}\n", pre.join(" and ")));
    }
    out
}

/// Per-rule index data resolved against an environment.
#[derive(Debug, Clone)]
pub(crate) struct ResolvedRule {
    /// `(state index, unit, membership)` per precondition.
    pub preconditions: Vec<(usize, Unit, MembershipFunction)>,
    /// Action index (discrete) or dimension index (continuous).
    pub target: usize,
    pub conclusion_set: Option<FuzzySet>,
}

pub(crate) fn resolve(rb: &RuleBase, env: &EnvSpec) -> Result<Vec<ResolvedRule>, Diagnostics> {
    validate_rulebase(rb, env)?;
    let targets: HashMap<&str, usize> = match &env.action_space {
        ActionSpace::Discrete { labels } => labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect(),
        ActionSpace::Continuous { dims } => dims.iter().enumerate().map(|(i, d)| (d.name.as_str(), i)).collect(),
    };
    let mut out = Vec::with_capacity(rb.rules.len());
    for rule in &rb.rules {
        let preconditions = rule
            .preconditions
            .iter()
            .map(|p| {
                let v = rb.variable(&p.variable).expect("validated");
                let s = rb.set(&p.variable, &p.set).expect("validated");
                (v.index, v.unit, s.mf)
            })
            .collect();
        let (name, conclusion_set) = match &rule.conclusion {
            Conclusion::Action(a) => (a.as_str(), None),
            Conclusion::Dimension { dim, .. } => (dim.as_str(), rb.conclusion_set(rule).cloned()),
        };
        out.push(ResolvedRule {
            preconditions,
            target: targets[name],
            conclusion_set,
        });
    }
    Ok(out)
}
