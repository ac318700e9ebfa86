//! Recogniser for the subset of the Graphviz grammar a directed graph export
//! may use:
//!
//! ```text
//! graph  := "digraph" id? "{" stmt* "}"
//! stmt   := (id "=" id | id attrs? | id "->" id attrs?) ";"?
//! attrs  := "[" (id "=" id ("," | ";")?)* "]"
//! id     := [A-Za-z_][A-Za-z0-9_]* | numeral | "quoted" with \" escapes
//! ```

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Id(String),
    Sym(&'static str),
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let cs: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match cs.get(i) {
                    None => return Err("unterminated string".into()),
                    Some('"') => break,
                    Some('\\') => {
                        let n = *cs.get(i + 1).ok_or("dangling escape")?;
                        // Graphviz keeps unknown escapes such as \n for the renderer.
                        if n != '"' && n != '\\' {
                            s.push('\\');
                        }
                        s.push(n);
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            i += 1;
            out.push(Tok::Id(s));
        } else if c == '-' && cs.get(i + 1) == Some(&'>') {
            out.push(Tok::Sym("->"));
            i += 2;
        } else if let Some(sym) = ["{", "}", "[", "]", "=", ";", ","].into_iter().find(|s| s.starts_with(c)) {
            out.push(Tok::Sym(sym));
            i += 1;
        } else if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
            let start = i;
            while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_' || cs[i] == '.') {
                i += 1;
            }
            if i == start {
                return Err(format!("bad character `{c}`"));
            }
            out.push(Tok::Id(cs[start..i].iter().collect()));
        } else {
            return Err(format!("bad character `{c}` at {i}"));
        }
    }
    Ok(out)
}

pub type Attrs = Vec<(String, String)>;

#[derive(Debug, Default)]
pub struct DotGraph {
    pub nodes: Vec<(String, Attrs)>,
    pub edges: Vec<(String, String, Attrs)>,
}

pub fn parse(src: &str) -> Result<DotGraph, String> {
    let t = lex(src)?;
    let mut p = 0;
    let id = |p: &mut usize| match t.get(*p) {
        Some(Tok::Id(s)) => {
            *p += 1;
            Ok(s.clone())
        }
        other => Err(format!("expected id at token {p}, found {other:?}")),
    };
    let sym = |p: &mut usize, s: &str| match t.get(*p) {
        Some(Tok::Sym(x)) if *x == s => {
            *p += 1;
            true
        }
        _ => false,
    };
    if id(&mut p)? != "digraph" {
        return Err("expected digraph".into());
    }
    if matches!(t.get(p), Some(Tok::Id(_))) {
        p += 1;
    }
    if !sym(&mut p, "{") {
        return Err("expected {".into());
    }
    let mut g = DotGraph::default();
    loop {
        if sym(&mut p, "}") {
            break;
        }
        let a = id(&mut p)?;
        if sym(&mut p, "=") {
            id(&mut p)?;
        } else {
            let target = if sym(&mut p, "->") { Some(id(&mut p)?) } else { None };
            let mut attrs = Vec::new();
            if sym(&mut p, "[") {
                while !sym(&mut p, "]") {
                    let k = id(&mut p)?;
                    if !sym(&mut p, "=") {
                        return Err("expected = in attribute list".into());
                    }
                    attrs.push((k, id(&mut p)?));
                    let _ = sym(&mut p, ",") || sym(&mut p, ";");
                }
            }
            match target {
                Some(b) => g.edges.push((a, b, attrs)),
                None => g.nodes.push((a, attrs)),
            }
        }
        let _ = sym(&mut p, ";");
    }
    if p != t.len() {
        return Err("trailing tokens".into());
    }
    Ok(g)
}
