use std::fmt;

/// Node predicates usable in `property(...)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    NameIs(String),
    AttrIs { port: String, key: String, value: String },
    Degree(Cmp, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl Cmp {
    pub fn holds(self, a: usize, b: usize) -> bool {
        match self {
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Eq => a == b,
            Cmp::Ne => a != b,
            Cmp::Ge => a >= b,
            Cmp::Gt => a > b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Eq => "=",
            Cmp::Ne => "!=",
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
        }
    }
}

/// Expressions computing a position from the current located graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Focus {
    CrtGraph,
    CrtPos,
    AllSuc,
    OneSuc,
    NextSuc,
    Property(Predicate, Box<Focus>),
    Union(Box<Focus>, Box<Focus>),
    Intersection(Box<Focus>, Box<Focus>),
    Complement(Box<Focus>),
    Minus(Box<Focus>, Box<Focus>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Id,
    Fail,
    Rule(String),
    /// Both operands applied at once on disjoint, unconnected matches.
    Par(Box<Strategy>, Box<Strategy>),
    /// As many of the two operands as possible, at least one.
    Ior(Box<Strategy>, Box<Strategy>),
    /// Between `min` and `max` simultaneous copies; `None` is unbounded.
    Multi(Box<Strategy>, u64, Option<u64>),
    Seq(Box<Strategy>, Box<Strategy>),
    Or(Box<Strategy>, Box<Strategy>),
    PPick(Vec<(Strategy, f64)>),
    While {
        cond: Box<Strategy>,
        body: Box<Strategy>,
        min: u64,
        max: Option<u64>,
    },
    If(Box<Strategy>, Box<Strategy>, Box<Strategy>),
    Empty(Focus),
    Atomic(Box<Strategy>),
    SetPos(Focus),
}

impl Strategy {
    pub fn seq(a: Strategy, b: Strategy) -> Strategy {
        Strategy::Seq(Box::new(a), Box::new(b))
    }

    pub fn or(a: Strategy, b: Strategy) -> Strategy {
        Strategy::Or(Box::new(a), Box::new(b))
    }

    pub fn rule(name: &str) -> Strategy {
        Strategy::Rule(name.to_string())
    }

    /// `while(s) do(s) min(1)` with no maximum.
    pub fn repeat(s: Strategy) -> Strategy {
        Strategy::While {
            cond: Box::new(s.clone()),
            body: Box::new(s),
            min: 1,
            max: None,
        }
    }

    /// Names of every rule the strategy applies.
    pub fn rule_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_rules(&mut out);
        out
    }

    fn collect_rules<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Strategy::Rule(n) => out.push(n),
            Strategy::Par(a, b) | Strategy::Ior(a, b) | Strategy::Seq(a, b) | Strategy::Or(a, b) => {
                a.collect_rules(out);
                b.collect_rules(out);
            }
            Strategy::Multi(a, _, _) | Strategy::Atomic(a) => a.collect_rules(out),
            Strategy::PPick(bs) => bs.iter().for_each(|(s, _)| s.collect_rules(out)),
            Strategy::While { cond, body, .. } => {
                cond.collect_rules(out);
                body.collect_rules(out);
            }
            Strategy::If(c, t, e) => {
                c.collect_rules(out);
                t.collect_rules(out);
                e.collect_rules(out);
            }
            Strategy::Id | Strategy::Fail | Strategy::Empty(_) | Strategy::SetPos(_) => {}
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Strategy::Or(..) => 0,
            Strategy::Seq(..) => 1,
            _ => 2,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "(")?;
            self.write_at(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Strategy::Id => write!(f, "id"),
            Strategy::Fail => write!(f, "fail"),
            Strategy::Rule(n) => write_ident(f, n),
            Strategy::Par(a, b) => write!(f, "par({a}, {b})"),
            Strategy::Ior(a, b) => write!(f, "ior({a}, {b})"),
            Strategy::Multi(a, m, n) => write!(f, "multi({a}, {m}, {})", signed(*n)),
            Strategy::Seq(a, b) => {
                a.write_at(f, 1)?;
                write!(f, "; ")?;
                b.write_at(f, 2)
            }
            Strategy::Or(a, b) => {
                a.write_at(f, 0)?;
                write!(f, " + ")?;
                b.write_at(f, 1)
            }
            Strategy::PPick(bs) => {
                write!(f, "ppick(")?;
                for (i, (s, p)) in bs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{s}/{p:?}")?;
                }
                write!(f, ")")
            }
            Strategy::While { cond, body, min, max } => {
                write!(f, "while({cond}) do({body}) min({min}) max({})", signed(*max))
            }
            Strategy::If(c, t, e) => write!(f, "if({c}) then({t}) else({e})"),
            Strategy::Empty(x) => write!(f, "empty({x})"),
            Strategy::Atomic(s) => write!(f, "atomic({s})"),
            Strategy::SetPos(x) => write!(f, "setpos({x})"),
        }
    }
}

fn signed(n: Option<u64>) -> String {
    n.map_or_else(|| "-1".to_string(), |n| n.to_string())
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}

pub(crate) const KEYWORDS: &[&str] = &[
    "id", "fail", "ppick", "while", "do", "min", "max", "repeat", "if", "then", "else", "empty",
    "setpos", "atomic", "par", "ior", "multi",
];

pub(crate) fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
}

pub(crate) fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || "_-.".contains(c)
}

/// Raw tokens inside `property(...)` end at whitespace, commas, parentheses
/// and quotes.
pub(crate) fn is_value_char(c: char) -> bool {
    !c.is_whitespace() && !",()\"#".contains(c)
}

fn quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    write!(f, "{}", serde_json::to_string(s).expect("strings serialise"))
}

/// Rule names: bare when they lex back as one identifier and are not a
/// keyword, quoted otherwise.
pub(crate) fn write_ident(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    let mut chars = s.chars();
    let bare = chars.next().is_some_and(is_ident_start) && chars.all(is_ident_char) && !is_keyword(s);
    if bare {
        write!(f, "{s}")
    } else {
        quoted(f, s)
    }
}

fn write_value(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    if !s.is_empty() && s.chars().all(is_value_char) {
        write!(f, "{s}")
    } else {
        quoted(f, s)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::NameIs(n) => {
                write!(f, "name=")?;
                write_value(f, n)
            }
            Predicate::AttrIs { port, key, value } => {
                write!(f, "attr(")?;
                write_value(f, port)?;
                write!(f, ", ")?;
                write_value(f, key)?;
                write!(f, ")=")?;
                write_value(f, value)
            }
            Predicate::Degree(c, k) => write!(f, "degree{}{k}", c.symbol()),
        }
    }
}

impl fmt::Display for Focus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Focus::CrtGraph => write!(f, "crtGraph"),
            Focus::CrtPos => write!(f, "crtPos"),
            Focus::AllSuc => write!(f, "allSuc"),
            Focus::OneSuc => write!(f, "oneSuc"),
            Focus::NextSuc => write!(f, "nextSuc"),
            Focus::Property(p, x) => write!(f, "property({p}, {x})"),
            Focus::Union(a, b) => write!(f, "union({a}, {b})"),
            Focus::Intersection(a, b) => write!(f, "inter({a}, {b})"),
            Focus::Complement(a) => write!(f, "complement({a})"),
            Focus::Minus(a, b) => write!(f, "minus({a}, {b})"),
        }
    }
}
