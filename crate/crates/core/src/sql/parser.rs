use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::SqlError;

/// Parse a query in the supported subset. Queries using joins, subqueries,
/// CASE, set operations, functions or arithmetic come back as
/// [`QueryKind::ComplexOpaque`] with the raw text preserved.
pub fn parse_sql(raw: &str) -> Result<SqlQuery, SqlError> {
    let tokens = lex(raw)?;
    match tokens.first() {
        Some(t) if t.is_keyword("SELECT") => {}
        Some(t) => return Err(SqlError::syntax(t.offset, "expected SELECT")),
        None => return Err(SqlError::syntax(0, "empty query")),
    }
    let mut p = Parser {
        toks: &tokens,
        pos: 0,
        src_len: raw.len(),
    };
    match p.select() {
        Ok(select) => Ok(SqlQuery {
            raw: raw.to_owned(),
            kind: QueryKind::Parsed(Box::new(select)),
        }),
        Err(e) => {
            let features = complex_features(&tokens);
            if features.is_empty() {
                Err(e)
            } else {
                Ok(SqlQuery {
                    raw: raw.to_owned(),
                    kind: QueryKind::ComplexOpaque { features },
                })
            }
        }
    }
}

fn complex_features(tokens: &[Token]) -> Vec<String> {
    let mut found = Vec::new();
    let mut add = |f: &str| {
        if !found.iter().any(|x: &String| x == f) {
            found.push(f.to_owned());
        }
    };
    let mut depth = 0usize;
    let mut in_from = false;
    for (i, t) in tokens.iter().enumerate() {
        let next = tokens.get(i + 1);
        match &t.tok {
            Tok::Word(w) => {
                let u = w.to_ascii_uppercase();
                match u.as_str() {
                    "JOIN" => add("join"),
                    "UNION" | "INTERSECT" | "EXCEPT" => add("set_operation"),
                    "CASE" => add("case"),
                    "HAVING" => add("having"),
                    "IS" | "NULL" => add("null_test"),
                    "EXISTS" => add("subquery"),
                    "SELECT" if depth > 0 => add("subquery"),
                    "FROM" if depth == 0 => in_from = true,
                    "WHERE" | "GROUP" | "ORDER" | "LIMIT" if depth == 0 => in_from = false,
                    _ => {
                        if next.is_some_and(|n| n.is_sym("(")) && AggFunc::from_name(&u).is_none() {
                            add("function");
                        }
                    }
                }
            }
            Tok::Sym("(") => depth += 1,
            Tok::Sym(")") => depth = depth.saturating_sub(1),
            Tok::Sym(",") if in_from && depth == 0 => add("join"),
            Tok::Sym("+" | "/" | "%" | "||") => add("arithmetic"),
            Tok::Sym("-") => {
                let prev_is_value = i > 0
                    && matches!(
                        tokens[i - 1].tok,
                        Tok::Word(_) | Tok::QuotedIdent(_) | Tok::Number(_) | Tok::Str(_) | Tok::Sym(")")
                    )
                    && !tokens[i - 1].is_keyword("AND")
                    && !tokens[i - 1].is_keyword("OR")
                    && !tokens[i - 1].is_keyword("NOT")
                    && !tokens[i - 1].is_keyword("BETWEEN");
                if prev_is_value {
                    add("arithmetic");
                }
            }
            Tok::Sym("*") => {
                let prev = i.checked_sub(1).map(|j| &tokens[j]);
                let star_ok = prev.is_some_and(|p| p.is_keyword("SELECT") || p.is_keyword("DISTINCT") || p.is_sym("(") || p.is_sym(","));
                if !star_ok {
                    add("arithmetic");
                }
            }
            _ => {}
        }
    }
    found
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    src_len: usize,
}

type PResult<T> = Result<T, SqlError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.src_len, |t| t.offset)
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(SqlError::syntax(self.offset(), msg))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.peek().is_some_and(|t| t.is_keyword(kw)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.err(format!("expected {kw}"))
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.peek().is_some_and(|t| t.is_sym(s)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected {s:?}"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Word(w)) if !RESERVED.iter().any(|k| k.eq_ignore_ascii_case(w)) => {
                self.pos += 1;
                Ok(w.clone())
            }
            Some(Tok::QuotedIdent(w)) => {
                self.pos += 1;
                Ok(w.clone())
            }
            _ => self.err("expected identifier"),
        }
    }

    /// Column reference, dropping an optional `table.` qualifier.
    fn column(&mut self) -> PResult<String> {
        let first = self.ident()?;
        if self.eat_sym(".") {
            self.ident()
        } else {
            Ok(first)
        }
    }

    fn select(&mut self) -> PResult<Select> {
        self.expect_kw("SELECT")?;
        let distinct = self.eat_kw("DISTINCT");
        let items = if self.eat_sym("*") {
            SelectList::Star
        } else {
            let mut items = vec![self.select_item()?];
            while self.eat_sym(",") {
                items.push(self.select_item()?);
            }
            SelectList::Items(items)
        };
        self.expect_kw("FROM")?;
        let from = self.ident()?;
        let where_clause = if self.eat_kw("WHERE") {
            Some(self.or_expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            group_by.push(self.column()?);
            while self.eat_sym(",") {
                group_by.push(self.column()?);
            }
        }
        let mut order_by = Vec::new();
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            loop {
                let key = self.value_expr()?;
                let descending = if self.eat_kw("DESC") {
                    true
                } else {
                    self.eat_kw("ASC");
                    false
                };
                order_by.push(OrderTerm { key, descending });
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let limit = if self.eat_kw("LIMIT") {
            let count = self.unsigned()?;
            let offset = if self.eat_kw("OFFSET") {
                Some(self.unsigned()?)
            } else {
                None
            };
            Some(Limit { count, offset })
        } else {
            None
        };
        self.eat_sym(";");
        if self.pos < self.toks.len() {
            return self.err("unexpected trailing input");
        }
        Ok(Select {
            distinct,
            items,
            from,
            where_clause,
            group_by,
            order_by,
            limit,
        })
    }

    fn unsigned(&mut self) -> PResult<u64> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Number(n)) => match n.parse() {
                Ok(v) => {
                    self.pos += 1;
                    Ok(v)
                }
                Err(_) => self.err("expected a non-negative integer"),
            },
            _ => self.err("expected a non-negative integer"),
        }
    }

    fn select_item(&mut self) -> PResult<SelectItem> {
        let expr = self.value_expr()?;
        let alias = if self.eat_kw("AS") {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(SelectItem { expr, alias })
    }

    fn value_expr(&mut self) -> PResult<ValueExpr> {
        if let Some(Tok::Word(w)) = self.peek().map(|t| &t.tok) {
            if let Some(func) = AggFunc::from_name(w) {
                if self.toks.get(self.pos + 1).is_some_and(|t| t.is_sym("(")) {
                    self.pos += 2;
                    let distinct = self.eat_kw("DISTINCT");
                    let column = if func == AggFunc::Count && !distinct && self.eat_sym("*") {
                        None
                    } else {
                        Some(self.column()?)
                    };
                    self.expect_sym(")")?;
                    return Ok(ValueExpr::Aggregate {
                        func,
                        distinct,
                        column,
                    });
                }
            }
        }
        Ok(ValueExpr::Column(self.column()?))
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut parts = vec![self.and_expr()?];
        while self.eat_kw("OR") {
            parts.push(self.and_expr()?);
        }
        Ok(flatten(parts, true))
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut parts = vec![self.not_expr()?];
        while self.eat_kw("AND") {
            parts.push(self.not_expr()?);
        }
        Ok(flatten(parts, false))
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat_kw("NOT") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.predicate()
    }

    fn predicate(&mut self) -> PResult<Expr> {
        if self.peek().is_some_and(|t| t.is_sym("(")) {
            // parenthesized predicate, unless it is a subquery
            if self.toks.get(self.pos + 1).is_some_and(|t| t.is_keyword("SELECT")) {
                return self.err("subquery");
            }
            self.pos += 1;
            let e = self.or_expr()?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        let operand = self.operand()?;
        let negated = self.eat_kw("NOT");
        if self.eat_kw("LIKE") {
            return match self.peek().map(|t| &t.tok) {
                Some(Tok::Str(s)) => {
                    self.pos += 1;
                    Ok(Expr::Like {
                        operand,
                        pattern: s.clone(),
                        negated,
                    })
                }
                _ => self.err("expected a string pattern after LIKE"),
            };
        }
        if self.eat_kw("IN") {
            self.expect_sym("(")?;
            let mut list = vec![self.literal()?];
            while self.eat_sym(",") {
                list.push(self.literal()?);
            }
            self.expect_sym(")")?;
            return Ok(Expr::In {
                operand,
                list,
                negated,
            });
        }
        if self.eat_kw("BETWEEN") {
            let low = self.operand()?;
            self.expect_kw("AND")?;
            let high = self.operand()?;
            return Ok(Expr::Between {
                operand,
                low,
                high,
                negated,
            });
        }
        if negated {
            return self.err("expected LIKE, IN or BETWEEN after NOT");
        }
        let op = match self.peek().map(|t| &t.tok) {
            Some(Tok::Sym("=" | "==")) => CmpOp::Eq,
            Some(Tok::Sym("!=" | "<>")) => CmpOp::Ne,
            Some(Tok::Sym("<")) => CmpOp::Lt,
            Some(Tok::Sym("<=")) => CmpOp::Le,
            Some(Tok::Sym(">")) => CmpOp::Gt,
            Some(Tok::Sym(">=")) => CmpOp::Ge,
            _ => return self.err("expected a comparison operator"),
        };
        self.pos += 1;
        let right = self.operand()?;
        Ok(Expr::Compare { left: operand, op, right })
    }

    fn operand(&mut self) -> PResult<Operand> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Number(_) | Tok::Str(_)) | Some(Tok::Sym("-")) => Ok(Operand::Literal(self.literal()?)),
            _ => Ok(Operand::Column(self.column()?)),
        }
    }

    fn literal(&mut self) -> PResult<Literal> {
        let negative = self.eat_sym("-");
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Number(n)) => {
                self.pos += 1;
                let text = if negative { format!("-{n}") } else { n.clone() };
                if !n.contains(['.', 'e', 'E']) {
                    if let Ok(i) = text.parse::<i64>() {
                        return Ok(Literal::Integer(i));
                    }
                }
                match text.parse::<f64>() {
                    Ok(r) => Ok(Literal::Real(r)),
                    Err(_) => self.err("malformed number"),
                }
            }
            Some(Tok::Str(s)) if !negative => {
                self.pos += 1;
                Ok(Literal::Text(s.clone()))
            }
            _ => self.err("expected a literal"),
        }
    }
}

fn flatten(parts: Vec<Expr>, or: bool) -> Expr {
    if parts.len() == 1 {
        return parts.into_iter().next().unwrap();
    }
    let mut out = Vec::with_capacity(parts.len());
    for p in parts {
        match p {
            Expr::Or(xs) if or => out.extend(xs),
            Expr::And(xs) if !or => out.extend(xs),
            other => out.push(other),
        }
    }
    if or {
        Expr::Or(out)
    } else {
        Expr::And(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsed(s: &str) -> Select {
        parse_sql(s).unwrap().select().cloned().expect("subset query")
    }

    #[test]
    fn parses_select_where() {
        let q = parsed("SELECT c1 FROM t WHERE c2 > 3");
        assert_eq!(
            q.items,
            SelectList::Items(vec![SelectItem {
                expr: ValueExpr::Column("c1".into()),
                alias: None
            }])
        );
        assert_eq!(
            q.where_clause,
            Some(Expr::Compare {
                left: Operand::Column("c2".into()),
                op: CmpOp::Gt,
                right: Operand::Literal(Literal::Integer(3)),
            })
        );
    }

    #[test]
    fn parses_count_star() {
        let q = parsed("SELECT COUNT(*) FROM t");
        assert_eq!(
            q.items,
            SelectList::Items(vec![SelectItem {
                expr: ValueExpr::Aggregate {
                    func: AggFunc::Count,
                    distinct: false,
                    column: None
                },
                alias: None
            }])
        );
    }

    #[test]
    fn misspelled_keyword_is_a_syntax_error_at_zero() {
        assert_eq!(
            parse_sql("SELEC c1").unwrap_err(),
            SqlError::syntax(0, "expected SELECT")
        );
    }

    #[test]
    fn syntax_error_offsets_point_at_the_failure() {
        let err = parse_sql("SELECT c1 FROM t WHERE c2 >").unwrap_err();
        assert_eq!(err, SqlError::syntax(27, "expected identifier"));
        assert!(matches!(parse_sql("SELECT c1 t"), Err(SqlError::Syntax { offset: 10, .. })));
    }

    #[test]
    fn complex_queries_are_opaque() {
        for (sql, feature) in [
            ("select c1 from w where id = ( select id from w where c2 = 'x' ) + 1", "subquery"),
            ("select a.c1 from w a join v b on a.c1 = b.c1", "join"),
            ("select c1 from w, v", "join"),
            ("select case when c1 > 1 then 'a' else 'b' end from w", "case"),
            ("select c1 from w union select c2 from w", "set_operation"),
            ("select abs(c1 - c2) from w", "function"),
            ("select c1 from w where c2_number + 1 > 3", "arithmetic"),
        ] {
            let q = parse_sql(sql).unwrap();
            match q.kind {
                QueryKind::ComplexOpaque { features } => {
                    assert!(features.iter().any(|f| f == feature), "{sql}: {features:?}")
                }
                QueryKind::Parsed(_) => panic!("{sql} should be opaque"),
            }
            assert_eq!(q.raw, sql);
        }
    }

    #[test]
    fn full_clause_set() {
        let q = parsed(
            "select distinct w.c1 as name from w where not (c2 between 1 and 5 or c3 like 'a%') \
             and c4 not in (1, -2.5, 'x') group by c1 order by count(*) desc, c2 limit 3 offset 1;",
        );
        assert!(q.distinct);
        assert_eq!(q.group_by, vec!["c1".to_string()]);
        assert_eq!(q.order_by.len(), 2);
        assert_eq!(q.limit, Some(Limit { count: 3, offset: Some(1) }));
        assert_eq!(
            q.to_string(),
            "SELECT DISTINCT c1 AS name FROM w WHERE NOT (c2 BETWEEN 1 AND 5 OR c3 LIKE 'a%') \
             AND c4 NOT IN (1, -2.5, 'x') GROUP BY c1 ORDER BY COUNT(*) DESC, c2 LIMIT 3 OFFSET 1"
        );
    }

    #[test]
    fn nested_and_or_flatten_and_keep_meaning() {
        let q = parsed("SELECT * FROM t WHERE a = 1 AND (b = 2 AND c = 3) OR d = 4");
        assert_eq!(q.to_string(), "SELECT * FROM t WHERE a = 1 AND b = 2 AND c = 3 OR d = 4");
        let q = parsed("SELECT * FROM t WHERE a = 1 AND (b = 2 OR c = 3)");
        assert_eq!(q.to_string(), "SELECT * FROM t WHERE a = 1 AND (b = 2 OR c = 3)");
    }

    #[test]
    fn extreme_integers_survive_rendering() {
        let q = parsed("SELECT * FROM t WHERE a = -9223372036854775808 AND b = 9223372036854775808");
        let again = parsed(&q.to_string());
        assert_eq!(q, again);
    }

    #[test]
    fn quoted_identifiers_render_quoted() {
        let q = parsed(r#"SELECT "my col", "select" FROM "t 1" WHERE "count" = 'it''s'"#);
        assert_eq!(
            q.to_string(),
            r#"SELECT "my col", "select" FROM "t 1" WHERE "count" = 'it''s'"#
        );
    }
}
