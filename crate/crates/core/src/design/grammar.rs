//! A tiny call grammar shared by design and generator specifications:
//! `name(key=value, ...)` where a value is a number, a bare word, or a
//! bracketed list of numbers.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Number(f64),
    Word(String),
    List(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Call {
    pub name: String,
    pub args: Vec<(String, Value)>,
}

impl Call {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.args.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Rejects any argument whose key is not in `allowed`.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, _) in &self.args {
            if !allowed.contains(&k.as_str()) {
                return Err(grammar_error(
                    k,
                    &format!(
                        "unknown argument for {}(); expected one of {allowed:?}",
                        self.name
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn number(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Number(v)) => Ok(Some(*v)),
            Some(_) => Err(grammar_error(key, "expected a number")),
        }
    }

    pub fn count(&self, key: &str) -> Result<Option<usize>> {
        match self.number(key)? {
            None => Ok(None),
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(Some(v as usize)),
            Some(v) => Err(grammar_error(
                key,
                &format!("expected a non-negative integer, got {v}"),
            )),
        }
    }

    pub fn required_count(&self, key: &str) -> Result<usize> {
        self.count(key)?
            .ok_or_else(|| grammar_error(&self.name, &format!("missing required argument '{key}'")))
    }

    pub fn word(&self, key: &str) -> Result<Option<&str>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Word(w)) => Ok(Some(w)),
            Some(_) => Err(grammar_error(key, "expected a word")),
        }
    }

    pub fn boolean(&self, key: &str) -> Result<Option<bool>> {
        match self.word(key)? {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(w) => Err(grammar_error(w, "expected true or false")),
        }
    }

    pub fn counts(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::List(vs)) => vs
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(grammar_error(key, &format!("list entry {v} is not a count")))
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(grammar_error(key, "expected a list like [50, 50]")),
        }
    }
}

impl Call {
    /// A list of numbers; a bare number is a one-element list.
    pub fn numbers(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Number(v)) => Ok(Some(vec![*v])),
            Some(Value::List(vs)) => Ok(Some(vs.clone())),
            Some(_) => Err(grammar_error(key, "expected a number or a list of numbers")),
        }
    }

    pub fn required_number(&self, key: &str) -> Result<f64> {
        self.number(key)?
            .ok_or_else(|| grammar_error(&self.name, &format!("missing required argument '{key}'")))
    }
}

pub fn grammar_error(token: &str, message: &str) -> Error {
    Error::Grammar {
        token: token.to_string(),
        message: message.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Punct(char),
}

fn tokenize(input: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let chars: Vec<char> = input.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if "()[]=,".contains(c) {
            out.push(Token::Punct(c));
            i += 1;
        } else if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || ".+-".contains(chars[i])) {
                // Stop a sign that is not part of an exponent.
                if (chars[i] == '-' || chars[i] == '+') && !matches!(chars[i - 1], 'e' | 'E') {
                    break;
                }
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| grammar_error(&text, "not a number"))?;
            out.push(Token::Number(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            return Err(grammar_error(&c.to_string(), "unexpected character"));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn describe(t: Option<&Token>) -> String {
        match t {
            None => "<end>".into(),
            Some(Token::Ident(s)) => s.clone(),
            Some(Token::Number(v)) => v.to_string(),
            Some(Token::Punct(c)) => c.to_string(),
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.next() {
            Some(Token::Punct(p)) if p == c => Ok(()),
            other => Err(grammar_error(
                &Self::describe(other.as_ref()),
                &format!("expected '{c}'"),
            )),
        }
    }

    fn value(&mut self) -> Result<Value> {
        match self.next() {
            Some(Token::Number(v)) => Ok(Value::Number(v)),
            Some(Token::Ident(w)) => Ok(Value::Word(w)),
            Some(Token::Punct('[')) => {
                let mut items = Vec::new();
                if let Some(Token::Punct(']')) = self.peek() {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                loop {
                    match self.next() {
                        Some(Token::Number(v)) => items.push(v),
                        other => {
                            return Err(grammar_error(
                                &Self::describe(other.as_ref()),
                                "expected a number in list",
                            ))
                        }
                    }
                    match self.next() {
                        Some(Token::Punct(',')) => continue,
                        Some(Token::Punct(']')) => break,
                        other => {
                            return Err(grammar_error(
                                &Self::describe(other.as_ref()),
                                "expected ',' or ']'",
                            ))
                        }
                    }
                }
                Ok(Value::List(items))
            }
            other => Err(grammar_error(&Self::describe(other.as_ref()), "expected a value")),
        }
    }
}

/// Parses `name`, `name()` or `name(k=v, ...)`.
pub fn parse_call(input: &str) -> Result<Call> {
    let tokens = tokenize(input)?;
    let mut p = Parser { tokens, pos: 0 };
    let name = match p.next() {
        Some(Token::Ident(n)) => n,
        other => {
            return Err(grammar_error(
                &Parser::describe(other.as_ref()),
                "expected a name",
            ))
        }
    };
    let mut args = Vec::new();
    if p.peek().is_some() {
        p.expect('(')?;
        if let Some(Token::Punct(')')) = p.peek() {
            p.pos += 1;
        } else {
            loop {
                let key = match p.next() {
                    Some(Token::Ident(k)) => k,
                    other => {
                        return Err(grammar_error(
                            &Parser::describe(other.as_ref()),
                            "expected an argument name",
                        ))
                    }
                };
                p.expect('=')?;
                let v = p.value()?;
                if args.iter().any(|(k, _)| *k == key) {
                    return Err(grammar_error(&key, "duplicate argument"));
                }
                args.push((key, v));
                match p.next() {
                    Some(Token::Punct(',')) => continue,
                    Some(Token::Punct(')')) => break,
                    other => {
                        return Err(grammar_error(
                            &Parser::describe(other.as_ref()),
                            "expected ',' or ')'",
                        ))
                    }
                }
            }
        }
        if let Some(t) = p.peek() {
            return Err(grammar_error(&Parser::describe(Some(t)), "trailing input"));
        }
    }
    Ok(Call { name, args })
}
