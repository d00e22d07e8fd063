//! Recursive-descent parser for strategy text.
//!
//! `+` binds looser than `;`, both associate to the left, and parentheses
//! group. `#` starts a comment running to the end of the line. Keywords are
//! case-insensitive; a rule whose name collides with a keyword can be written
//! as a quoted string.

use crate::error::ParseError;
use crate::model::RuleSet;

use super::ast::{is_ident_char, is_ident_start, is_value_char, Cmp, Focus, Predicate, Strategy};

/// Tolerance on the sum of `ppick` probabilities.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

pub fn parse(text: &str) -> Result<Strategy, ParseError> {
    Parser::new(text, None).parse_all()
}

/// Parses and checks that every applied rule exists in `rules`.
pub fn parse_with_rules(text: &str, rules: &RuleSet) -> Result<Strategy, ParseError> {
    Parser::new(text, Some(rules)).parse_all()
}

struct Parser<'r> {
    chars: Vec<char>,
    pos: usize,
    rules: Option<&'r RuleSet>,
}

impl<'r> Parser<'r> {
    fn new(text: &str, rules: Option<&'r RuleSet>) -> Self {
        Parser {
            chars: text.chars().collect(),
            pos: 0,
            rules,
        }
    }

    fn error_at(&self, pos: usize, message: impl Into<String>) -> ParseError {
        let (mut line, mut column) = (1, 1);
        for c in &self.chars[..pos.min(self.chars.len())] {
            if *c == '\n' {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
        }
        ParseError {
            line,
            column,
            message: message.into(),
        }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        self.error_at(self.pos, message)
    }

    fn skip_ws(&mut self) {
        while let Some(&c) = self.chars.get(self.pos) {
            if c.is_whitespace() {
                self.pos += 1;
            } else if c == '#' {
                while self.chars.get(self.pos).is_some_and(|c| *c != '\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("'{c}'")))
        }
    }

    fn unexpected(&mut self, wanted: &str) -> ParseError {
        match self.peek() {
            Some(c) => self.error(format!("expected {wanted}, found '{c}'")),
            None => self.error(format!("expected {wanted}, found end of input")),
        }
    }

    fn ident(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        if !self.chars.get(self.pos).copied().is_some_and(is_ident_start) {
            return None;
        }
        while self.chars.get(self.pos).copied().is_some_and(is_ident_char) {
            self.pos += 1;
        }
        Some(self.chars[start..self.pos].iter().collect())
    }

    /// Consumes `word` if the next identifier equals it (ignoring case).
    fn keyword(&mut self, word: &str) -> bool {
        let save = self.pos;
        match self.ident() {
            Some(w) if w.eq_ignore_ascii_case(word) => true,
            _ => {
                self.pos = save;
                false
            }
        }
    }

    fn expect_keyword(&mut self, word: &str) -> Result<(), ParseError> {
        if self.keyword(word) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("'{word}'")))
        }
    }

    fn quoted(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        let start = self.pos;
        self.pos += 1;
        let mut escaped = false;
        while let Some(&c) = self.chars.get(self.pos) {
            self.pos += 1;
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                let raw: String = self.chars[start..self.pos].iter().collect();
                return serde_json::from_str(&raw).map_err(|e| self.error_at(start, format!("bad string: {e}")));
            }
        }
        Err(self.error_at(start, "unterminated string"))
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self
            .chars
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_digit() || "+-.eE".contains(*c))
        {
            self.pos += 1;
        }
        let raw: String = self.chars[start..self.pos].iter().collect();
        raw.parse::<f64>()
            .map_err(|_| self.error_at(start, format!("expected a number, found '{raw}'")))
    }

    fn integer(&mut self) -> Result<i64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        if self.chars.get(self.pos) == Some(&'-') {
            self.pos += 1;
        }
        while self.chars.get(self.pos).is_some_and(char::is_ascii_digit) {
            self.pos += 1;
        }
        let raw: String = self.chars[start..self.pos].iter().collect();
        raw.parse::<i64>()
            .map_err(|_| self.error_at(start, format!("expected an integer, found '{raw}'")))
    }

    fn parse_all(mut self) -> Result<Strategy, ParseError> {
        let s = self.strategy()?;
        if self.peek().is_some() {
            return Err(self.unexpected("end of input"));
        }
        Ok(s)
    }

    fn strategy(&mut self) -> Result<Strategy, ParseError> {
        let mut left = self.sequence()?;
        while self.eat('+') {
            let right = self.sequence()?;
            left = Strategy::or(left, right);
        }
        Ok(left)
    }

    fn sequence(&mut self) -> Result<Strategy, ParseError> {
        let mut left = self.atom()?;
        while self.eat(';') {
            let right = self.atom()?;
            left = Strategy::seq(left, right);
        }
        Ok(left)
    }

    fn parenthesised(&mut self) -> Result<Strategy, ParseError> {
        self.expect('(')?;
        let s = self.strategy()?;
        self.expect(')')?;
        Ok(s)
    }

    fn atom(&mut self) -> Result<Strategy, ParseError> {
        match self.peek() {
            Some('(') => return self.parenthesised(),
            Some('<') => {
                self.pos += 1;
                let s = self.strategy()?;
                self.expect('>')?;
                return Ok(Strategy::Atomic(Box::new(s)));
            }
            Some('"') => {
                let at = self.pos;
                let name = self.quoted()?;
                return self.rule_at(at, name);
            }
            _ => {}
        }
        let at = self.pos;
        let Some(word) = self.ident() else {
            return Err(self.unexpected("a strategy"));
        };
        match word.to_ascii_lowercase().as_str() {
            "id" => Ok(Strategy::Id),
            "fail" => Ok(Strategy::Fail),
            "ppick" => self.ppick(at),
            "while" => {
                let cond = self.parenthesised()?;
                self.expect_keyword("do")?;
                let body = self.parenthesised()?;
                let (min, max) = self.bounds()?;
                Ok(Strategy::While {
                    cond: Box::new(cond),
                    body: Box::new(body),
                    min,
                    max,
                })
            }
            "repeat" => {
                self.expect('*')?;
                self.expect('(')?;
                let mut body = self.strategy()?;
                while self.eat(',') {
                    let next = self.strategy()?;
                    body = Strategy::or(body, next);
                }
                self.expect(')')?;
                Ok(Strategy::repeat(body))
            }
            "if" => {
                let c = self.parenthesised()?;
                self.expect_keyword("then")?;
                let t = self.parenthesised()?;
                self.expect_keyword("else")?;
                let e = self.parenthesised()?;
                Ok(Strategy::If(Box::new(c), Box::new(t), Box::new(e)))
            }
            "empty" => Ok(Strategy::Empty(self.focus_arg()?)),
            "setpos" => Ok(Strategy::SetPos(self.focus_arg()?)),
            "atomic" => Ok(Strategy::Atomic(Box::new(self.parenthesised()?))),
            "par" | "ior" => {
                self.expect('(')?;
                let a = self.application()?;
                self.expect(',')?;
                let b = self.application()?;
                self.expect(')')?;
                let (a, b) = (Box::new(a), Box::new(b));
                Ok(if word.eq_ignore_ascii_case("par") {
                    Strategy::Par(a, b)
                } else {
                    Strategy::Ior(a, b)
                })
            }
            "multi" => {
                self.expect('(')?;
                let a = self.application()?;
                self.expect(',')?;
                let min_at = self.pos;
                let min = self.integer()?;
                self.expect(',')?;
                let max = self.integer()?;
                self.expect(')')?;
                let (min, max) = self.check_bounds(min_at, min, max)?;
                Ok(Strategy::Multi(Box::new(a), min, max))
            }
            _ => self.rule_at(at, word),
        }
    }

    fn rule_at(&self, at: usize, name: String) -> Result<Strategy, ParseError> {
        if let Some(rules) = self.rules {
            if !rules.contains(&name) {
                return Err(self.error_at(at, format!("unknown rule name {name}")));
            }
        }
        Ok(Strategy::Rule(name))
    }

    /// Operand of `par`, `ior` and `multi`: a rule, `id` or `fail`.
    fn application(&mut self) -> Result<Strategy, ParseError> {
        self.skip_ws();
        let at = self.pos;
        let s = self.strategy()?;
        match s {
            Strategy::Id | Strategy::Fail | Strategy::Rule(_) => Ok(s),
            _ => Err(self.error_at(at, "parallel operands must be a rule name, id or fail")),
        }
    }

    fn ppick(&mut self, at: usize) -> Result<Strategy, ParseError> {
        self.expect('(')?;
        let mut branches = Vec::new();
        loop {
            let s = self.strategy()?;
            self.expect('/')?;
            let p_at = self.pos;
            let p = self.number()?;
            if !(0.0..=1.0).contains(&p) {
                return Err(self.error_at(p_at, format!("probability {p} outside [0, 1]")));
            }
            branches.push((s, p));
            if !self.eat(',') {
                break;
            }
        }
        self.expect(')')?;
        let sum: f64 = branches.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(self.error_at(at, format!("probabilities sum to {sum}")));
        }
        Ok(Strategy::PPick(branches))
    }

    fn bounds(&mut self) -> Result<(u64, Option<u64>), ParseError> {
        self.skip_ws();
        let at = self.pos;
        let mut min = 0;
        let mut max = -1;
        if self.keyword("min") {
            self.expect('(')?;
            min = self.integer()?;
            self.expect(')')?;
        }
        if self.keyword("max") {
            self.expect('(')?;
            max = self.integer()?;
            self.expect(')')?;
        }
        self.check_bounds(at, min, max)
    }

    fn check_bounds(&self, at: usize, min: i64, max: i64) -> Result<(u64, Option<u64>), ParseError> {
        if min < 0 {
            return Err(self.error_at(at, format!("minimum {min} is negative")));
        }
        if max >= 0 && max < min {
            return Err(self.error_at(at, format!("maximum {max} is below minimum {min}")));
        }
        Ok((min as u64, (max >= 0).then_some(max as u64)))
    }

    fn focus_arg(&mut self) -> Result<Focus, ParseError> {
        self.expect('(')?;
        let f = self.focus()?;
        self.expect(')')?;
        Ok(f)
    }

    fn focus(&mut self) -> Result<Focus, ParseError> {
        if self.eat('(') {
            let f = self.focus()?;
            self.expect(')')?;
            return Ok(f);
        }
        let at = self.pos;
        let Some(word) = self.ident() else {
            return Err(self.unexpected("a focus expression"));
        };
        let two = |p: &mut Self| -> Result<(Box<Focus>, Box<Focus>), ParseError> {
            p.expect('(')?;
            let a = p.focus()?;
            p.expect(',')?;
            let b = p.focus()?;
            p.expect(')')?;
            Ok((Box::new(a), Box::new(b)))
        };
        match word.to_ascii_lowercase().as_str() {
            "crtgraph" => Ok(Focus::CrtGraph),
            "crtpos" => Ok(Focus::CrtPos),
            "allsuc" => Ok(Focus::AllSuc),
            "onesuc" => Ok(Focus::OneSuc),
            "nextsuc" => Ok(Focus::NextSuc),
            "property" => {
                self.expect('(')?;
                let pred = self.predicate()?;
                self.expect(',')?;
                let f = self.focus()?;
                self.expect(')')?;
                Ok(Focus::Property(pred, Box::new(f)))
            }
            "union" => two(self).map(|(a, b)| Focus::Union(a, b)),
            "inter" | "intersection" => two(self).map(|(a, b)| Focus::Intersection(a, b)),
            "minus" => two(self).map(|(a, b)| Focus::Minus(a, b)),
            "complement" => Ok(Focus::Complement(Box::new(self.focus_arg()?))),
            _ => Err(self.error_at(at, format!("unknown focus expression {word}"))),
        }
    }

    fn value(&mut self) -> Result<String, ParseError> {
        if self.peek() == Some('"') {
            return self.quoted();
        }
        let start = self.pos;
        while self.chars.get(self.pos).copied().is_some_and(is_value_char) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.unexpected("a value"));
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let at = self.pos;
        let Some(word) = self.ident() else {
            return Err(self.unexpected("a property"));
        };
        match word.to_ascii_lowercase().as_str() {
            "name" => {
                self.expect('=')?;
                Ok(Predicate::NameIs(self.value()?))
            }
            "attr" => {
                self.expect('(')?;
                let port = self.value()?;
                self.expect(',')?;
                let key = self.value()?;
                self.expect(')')?;
                self.expect('=')?;
                let value = self.value()?;
                Ok(Predicate::AttrIs { port, key, value })
            }
            "degree" => {
                let cmp = self.comparator()?;
                let k_at = self.pos;
                let k = self.integer()?;
                let k = usize::try_from(k).map_err(|_| self.error_at(k_at, "degree bound must be non-negative"))?;
                Ok(Predicate::Degree(cmp, k))
            }
            _ => Err(self.error_at(at, format!("unknown property {word}"))),
        }
    }

    fn comparator(&mut self) -> Result<Cmp, ParseError> {
        self.skip_ws();
        let rest: String = self.chars[self.pos..].iter().take(2).collect();
        let (cmp, len) = match rest.as_str() {
            ">=" => (Cmp::Ge, 2),
            "<=" => (Cmp::Le, 2),
            "!=" => (Cmp::Ne, 2),
            "==" => (Cmp::Eq, 2),
            _ => match rest.chars().next() {
                Some('≥') => (Cmp::Ge, 1),
                Some('≤') => (Cmp::Le, 1),
                Some('≠') => (Cmp::Ne, 1),
                Some('=') => (Cmp::Eq, 1),
                Some('>') => (Cmp::Gt, 1),
                Some('<') => (Cmp::Lt, 1),
                _ => return Err(self.unexpected("a comparison")),
            },
        };
        self.pos += len;
        Ok(cmp)
    }
}
