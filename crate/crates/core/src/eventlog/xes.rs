//! Minimal XES (IEEE 1849) support: `<trace>` and `<event>` elements with
//! `string`, `date`, `int`, `float`, `boolean` and `id` attributes.
//!
//! Trace-level `concept:name` is the trace id; other trace attributes become
//! categorical (`string`, `boolean`, `id`, `date`) or numerical (`int`,
//! `float`). Event-level attributes other than `concept:name`,
//! `time:timestamp` and `lifecycle:transition` are ignored. Log-level
//! `string` attributes are kept as log metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use quick_xml::events::{BytesStart, Event as XmlEvent};
use quick_xml::Reader;

use super::{format_timestamp, parse_timestamp, Event, EventLog, Trace};
use crate::error::{Error, Result};

#[derive(Default)]
struct PendingEvent {
    activity: Option<String>,
    timestamp: Option<String>,
    lifecycle: Option<String>,
}

#[derive(Default)]
struct PendingTrace {
    id: Option<String>,
    events: Vec<Event>,
    attrs_cat: Vec<(String, String)>,
    attrs_num: Vec<(String, f64)>,
}

#[derive(Clone, Copy, PartialEq)]
enum Scope {
    Log,
    Trace,
    Event,
    Other,
}

pub fn read_xes(path: &Path, concat_lifecycle: bool) -> Result<EventLog> {
    let file = path.display().to_string();
    let mut reader = Reader::from_reader(BufReader::new(File::open(path)?));
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut stack: Vec<Scope> = Vec::new();
    let mut trace: Option<PendingTrace> = None;
    let mut event: Option<PendingEvent> = None;
    let mut traces = Vec::new();
    let mut anonymous = 0usize;
    let mut meta = std::collections::BTreeMap::new();

    loop {
        let pos = reader.buffer_position();
        let ctx = || format!("{file}@byte {pos}");
        let xml = reader
            .read_event_into(&mut buf)
            .map_err(|e| Error::parse(ctx(), e))?;
        match xml {
            XmlEvent::Start(ref e) | XmlEvent::Empty(ref e) => {
                let is_empty = matches!(xml, XmlEvent::Empty(_));
                let name = e.name();
                let scope = match name.as_ref() {
                    b"log" => Scope::Log,
                    b"trace" => {
                        if stack.last() != Some(&Scope::Log) {
                            return Err(Error::parse(ctx(), "<trace> outside <log>"));
                        }
                        trace = Some(PendingTrace::default());
                        Scope::Trace
                    }
                    b"event" => {
                        match stack.last() {
                            Some(Scope::Trace) => event = Some(PendingEvent::default()),
                            // log-level events are not part of any trace
                            Some(Scope::Log) => {}
                            _ => return Err(Error::parse(ctx(), "misplaced <event>")),
                        }
                        Scope::Event
                    }
                    tag => {
                        let parent = stack.last().copied();
                        if let (Some(Scope::Event), Some(ev)) = (parent, event.as_mut()) {
                            read_event_attr(e, ev).map_err(|m| Error::parse(ctx(), m))?;
                        } else if parent == Some(Scope::Trace) {
                            read_trace_attr(tag, e, trace.as_mut().unwrap())
                                .map_err(|m| Error::parse(ctx(), m))?;
                        } else if parent == Some(Scope::Log) && tag == b"string" {
                            let (k, v) = key_value(e).map_err(|m| Error::parse(ctx(), m))?;
                            meta.insert(k, v);
                        }
                        Scope::Other
                    }
                };
                if !is_empty {
                    stack.push(scope);
                } else {
                    close(scope, &mut trace, &mut event, &mut traces, concat_lifecycle, &mut anonymous)
                        .map_err(|m| Error::parse(ctx(), m))?;
                }
            }
            XmlEvent::End(_) => {
                let scope = stack
                    .pop()
                    .ok_or_else(|| Error::parse(ctx(), "unbalanced closing tag"))?;
                close(scope, &mut trace, &mut event, &mut traces, concat_lifecycle, &mut anonymous)
                    .map_err(|m| Error::parse(ctx(), m))?;
            }
            XmlEvent::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !stack.is_empty() {
        return Err(Error::parse(file, "unexpected end of document"));
    }
    let mut log = EventLog::new(traces)?;
    log.meta = meta;
    Ok(log)
}

fn close(
    scope: Scope,
    trace: &mut Option<PendingTrace>,
    event: &mut Option<PendingEvent>,
    traces: &mut Vec<Trace>,
    concat_lifecycle: bool,
    anonymous: &mut usize,
) -> std::result::Result<(), String> {
    match scope {
        Scope::Event => {
            let Some(ev) = event.take() else { return Ok(()) };
            let mut activity = ev.activity.ok_or("event without concept:name")?;
            let raw_ts = ev.timestamp.ok_or("event without time:timestamp")?;
            let ts = parse_timestamp(&raw_ts).ok_or_else(|| format!("invalid date `{raw_ts}`"))?;
            if concat_lifecycle {
                if let Some(lc) = ev.lifecycle {
                    activity = format!("{activity}-{}", lc.to_uppercase());
                }
            }
            if let Some(t) = trace.as_mut() {
                t.events.push(Event::new(activity, ts));
            }
        }
        Scope::Trace => {
            let t = trace.take().ok_or("unbalanced </trace>")?;
            let id = t.id.unwrap_or_else(|| {
                *anonymous += 1;
                format!("trace-{anonymous}")
            });
            let mut out = Trace::new(id, t.events);
            out.attrs_cat.extend(t.attrs_cat);
            out.attrs_num.extend(t.attrs_num);
            traces.push(out);
        }
        _ => {}
    }
    Ok(())
}

fn key_value(e: &BytesStart) -> std::result::Result<(String, String), String> {
    let mut key = None;
    let mut value = None;
    for attr in e.attributes() {
        let attr = attr.map_err(|err| err.to_string())?;
        let v = attr.unescape_value().map_err(|err| err.to_string())?.into_owned();
        match attr.key.as_ref() {
            b"key" => key = Some(v),
            b"value" => value = Some(v),
            _ => {}
        }
    }
    match (key, value) {
        (Some(k), Some(v)) => Ok((k, v)),
        // containers and lists carry no value
        (Some(k), None) => Ok((k, String::new())),
        _ => Err("attribute element without key".into()),
    }
}

fn read_event_attr(e: &BytesStart, ev: &mut PendingEvent) -> std::result::Result<(), String> {
    let (key, value) = key_value(e)?;
    match key.as_str() {
        "concept:name" => ev.activity = Some(value),
        "time:timestamp" => ev.timestamp = Some(value),
        "lifecycle:transition" => ev.lifecycle = Some(value),
        _ => {}
    }
    Ok(())
}

fn read_trace_attr(
    tag: &[u8],
    e: &BytesStart,
    t: &mut PendingTrace,
) -> std::result::Result<(), String> {
    let (key, value) = key_value(e)?;
    if key == "concept:name" {
        t.id = Some(value);
        return Ok(());
    }
    match tag {
        b"int" | b"float" => {
            let v: f64 = value
                .parse()
                .map_err(|_| format!("attribute `{key}` value `{value}` is not numerical"))?;
            t.attrs_num.push((key, v));
        }
        b"string" | b"boolean" | b"id" | b"date" => t.attrs_cat.push((key, value)),
        _ => {}
    }
    Ok(())
}

fn escape(s: &str) -> std::borrow::Cow<'_, str> {
    quick_xml::escape::escape(s)
}

pub fn write_xes(log: &EventLog, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(w, r#"<log xes.version="1.0" xes.features="">"#)?;
    for (k, v) in &log.meta {
        writeln!(w, r#"  <string key="{}" value="{}"/>"#, escape(k), escape(v))?;
    }
    for trace in log.traces() {
        writeln!(w, "  <trace>")?;
        writeln!(w, r#"    <string key="concept:name" value="{}"/>"#, escape(&trace.id))?;
        for (k, v) in &trace.attrs_cat {
            writeln!(w, r#"    <string key="{}" value="{}"/>"#, escape(k), escape(v))?;
        }
        for (k, v) in &trace.attrs_num {
            writeln!(w, r#"    <float key="{}" value="{}"/>"#, escape(k), v)?;
        }
        for event in &trace.events {
            writeln!(w, "    <event>")?;
            writeln!(w, r#"      <string key="concept:name" value="{}"/>"#, escape(&event.activity))?;
            writeln!(
                w,
                r#"      <date key="time:timestamp" value="{}"/>"#,
                format_timestamp(&event.timestamp)
            )?;
            writeln!(w, "    </event>")?;
        }
        writeln!(w, "  </trace>")?;
    }
    writeln!(w, "</log>")?;
    w.flush()?;
    Ok(())
}
