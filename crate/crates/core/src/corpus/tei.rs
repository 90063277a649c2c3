//! TEI XML (GROBID flavour) to [`DocumentModel`].

use roxmltree::{Document, Node};

use super::{CorpusError, DocumentModel, Section, TableBlock};
use crate::schema::collapse_whitespace;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Include `<back>` divisions (acknowledgements, annexes). Bibliographies
    /// are never included.
    pub include_back_matter: bool,
}

pub fn parse_tei(xml_text: &str) -> Result<DocumentModel, CorpusError> {
    parse_tei_with(xml_text, ParseOptions::default())
}

pub fn parse_tei_with(xml_text: &str, options: ParseOptions) -> Result<DocumentModel, CorpusError> {
    let doc = Document::parse(xml_text).map_err(|e| {
        let pos = e.pos();
        CorpusError::Xml {
            message: e.to_string(),
            line: pos.row,
            column: pos.col,
        }
    })?;
    let root = doc.root_element();
    let header = child(root, "teiHeader");

    let doc_id = header
        .and_then(|h| {
            h.descendants()
                .filter(|n| is(*n, "idno"))
                .find(|n| n.attribute("type").is_some_and(|t| t.eq_ignore_ascii_case("doi")))
        })
        .map(text_of)
        .filter(|d| !d.is_empty())
        .ok_or(CorpusError::MissingDoi)?;

    let title = header
        .and_then(|h| {
            let titles: Vec<Node> = h
                .descendants()
                .filter(|n| is(*n, "titleStmt"))
                .flat_map(|ts| ts.children().filter(|n| is(*n, "title")))
                .collect();
            titles
                .iter()
                .find(|t| t.attribute("type") == Some("main"))
                .or(titles.first())
                .copied()
        })
        .map(text_of)
        .unwrap_or_default();

    let year = header.and_then(|h| {
        h.descendants()
            .filter(|n| is(*n, "date"))
            .filter_map(|n| n.attribute("when"))
            .find_map(|w| w.get(..4).and_then(|y| y.parse::<i32>().ok()))
    });

    let abstract_text = header
        .and_then(|h| h.descendants().find(|n| is(*n, "abstract")))
        .map(|a| {
            let paras: Vec<String> = a
                .descendants()
                .filter(|n| is(*n, "p"))
                .map(text_of)
                .filter(|p| !p.is_empty())
                .collect();
            if paras.is_empty() {
                text_of(a)
            } else {
                paras.join("\n")
            }
        })
        .unwrap_or_default();

    let mut flow = Flow::default();
    if let Some(text) = child(root, "text") {
        if let Some(body) = child(text, "body") {
            flow.walk_container(body);
        }
        if options.include_back_matter {
            if let Some(back) = child(text, "back") {
                flow.walk_container(back);
            }
        }
    }

    Ok(DocumentModel {
        doc_id,
        title,
        abstract_text,
        sections: flow.sections,
        tables: flow.tables,
        year,
    })
}

#[derive(Default)]
struct Flow {
    sections: Vec<Section>,
    tables: Vec<TableBlock>,
    loose: Vec<String>,
}

impl Flow {
    fn position(&self) -> usize {
        self.sections.len() + self.tables.len()
    }

    fn flush_loose(&mut self) {
        if !self.loose.is_empty() {
            self.sections.push(Section {
                heading: String::new(),
                paragraphs: std::mem::take(&mut self.loose),
            });
        }
    }

    fn walk_container(&mut self, node: Node) {
        for n in node.children().filter(Node::is_element) {
            match n.tag_name().name() {
                "div" => {
                    self.flush_loose();
                    if n.attribute("type") != Some("references") {
                        self.walk_div(n);
                    }
                }
                "p" | "formula" => {
                    let t = text_of(n);
                    if !t.is_empty() {
                        self.loose.push(t);
                    }
                }
                "figure" => {
                    self.flush_loose();
                    self.figure(n);
                }
                _ => {}
            }
        }
        self.flush_loose();
    }

    fn walk_div(&mut self, div: Node) {
        let heading = child(div, "head").map(text_of).unwrap_or_default();
        let paragraphs: Vec<String> = div
            .children()
            .filter(|n| is(*n, "p") || is(*n, "formula"))
            .map(text_of)
            .filter(|p| !p.is_empty())
            .collect();
        if !heading.is_empty() || !paragraphs.is_empty() {
            self.sections.push(Section {
                heading,
                paragraphs,
            });
        }
        for n in div.children().filter(Node::is_element) {
            match n.tag_name().name() {
                "figure" => self.figure(n),
                "div" => self.walk_div(n),
                _ => {}
            }
        }
    }

    fn figure(&mut self, fig: Node) {
        // Only tables survive; plots and images carry nothing readable.
        if fig.attribute("type") != Some("table") {
            return;
        }
        let caption = child(fig, "figDesc")
            .map(text_of)
            .filter(|c| !c.is_empty())
            .or_else(|| child(fig, "head").map(text_of))
            .unwrap_or_default();
        let mut rows: Vec<Vec<String>> = fig
            .descendants()
            .filter(|n| is(*n, "row"))
            .map(|row| {
                let mut cells = Vec::new();
                for cell in row.children().filter(|n| is(*n, "cell")) {
                    cells.push(text_of(cell));
                    let span = cell
                        .attribute("cols")
                        .and_then(|c| c.parse::<usize>().ok())
                        .unwrap_or(1);
                    for _ in 1..span.min(64) {
                        cells.push(String::new());
                    }
                }
                cells
            })
            .collect();
        let width = rows.iter().map(Vec::len).max().unwrap_or(0);
        for row in &mut rows {
            row.resize(width, String::new());
        }
        let source_position = self.position();
        self.tables.push(TableBlock {
            caption,
            rows,
            source_position,
        });
    }
}

fn is(node: Node, name: &str) -> bool {
    node.is_element() && node.tag_name().name() == name
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|n| is(*n, name))
}

fn text_of(node: Node) -> String {
    let raw: String = node
        .descendants()
        .filter(Node::is_text)
        .filter_map(|n| n.text())
        .collect();
    collapse_whitespace(&raw)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

/// Writes a document back out as minimal GROBID-style TEI. Parsing the
/// result yields the same document for any model `parse_tei` can produce.
pub fn to_tei(doc: &DocumentModel) -> String {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<TEI xmlns=\"http://www.tei-c.org/ns/1.0\">\n<teiHeader>\n<fileDesc>\n",
    );
    out.push_str(&format!(
        "<titleStmt><title level=\"a\" type=\"main\">{}</title></titleStmt>\n",
        escape(&doc.title)
    ));
    if let Some(year) = doc.year {
        out.push_str(&format!(
            "<publicationStmt><date type=\"published\" when=\"{year:04}\">{year}</date></publicationStmt>\n"
        ));
    }
    out.push_str(&format!(
        "<sourceDesc><biblStruct><analytic><idno type=\"DOI\">{}</idno></analytic></biblStruct></sourceDesc>\n</fileDesc>\n",
        escape(&doc.doc_id)
    ));
    if !doc.abstract_text.is_empty() {
        out.push_str("<profileDesc><abstract><div>");
        for p in doc.abstract_text.split('\n') {
            out.push_str(&format!("<p>{}</p>", escape(p)));
        }
        out.push_str("</div></abstract></profileDesc>\n");
    }
    out.push_str("</teiHeader>\n<text>\n<body>\n");
    for block in doc.blocks() {
        match block {
            super::Block::Section(s) => {
                out.push_str("<div>");
                if !s.heading.is_empty() {
                    out.push_str(&format!("<head>{}</head>", escape(&s.heading)));
                }
                for p in &s.paragraphs {
                    out.push_str(&format!("<p>{}</p>", escape(p)));
                }
                out.push_str("</div>\n");
            }
            super::Block::Table(t) => {
                out.push_str("<figure type=\"table\">");
                if !t.caption.is_empty() {
                    out.push_str(&format!("<figDesc>{}</figDesc>", escape(&t.caption)));
                }
                out.push_str("<table>");
                for row in &t.rows {
                    out.push_str("<row>");
                    for cell in row {
                        out.push_str(&format!("<cell>{}</cell>", escape(cell)));
                    }
                    out.push_str("</row>");
                }
                out.push_str("</table></figure>\n");
            }
        }
    }
    out.push_str("</body>\n</text>\n</TEI>\n");
    out
}
