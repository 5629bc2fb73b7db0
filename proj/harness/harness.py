# In-sandbox grading harness.
#
# Reads job.json from the working directory (and deletes it), runs precode,
# the student program and the probes in one namespace, then writes a single
# report to the real stdout after a sentinel line carrying the job's nonce:
#
#     \n <SENTINEL><nonce> \n \x01 <json report> \n
#
# The orchestrator only trusts the last sentinel that carries its nonce, so
# anything the student prints cannot forge a report.

import builtins
import hashlib
import io
import json
import os
import re
import sys
import traceback

SENTINEL = "\x1e__PYBOX_REPORT__"
VERSION = b"\x01"
MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

MAX_NODES = 20000
MAX_DEPTH = 64
DIGEST_OVER = 256 * 1024
MESSAGE_CAP = 2000

# Bound before any taboo trap is installed; the harness calls these while the
# student phase is active.
_exec, _eval, _compile, _repr = exec, eval, compile, repr


class _SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next(self):
        self.state = (self.state + GOLDEN) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def below(self, bound):
        remainder = (1 << 64) % bound
        x = self.next()
        if remainder:
            limit = (1 << 64) - remainder
            while x >= limit:
                x = self.next()
        return x % bound


class TabooViolation(BaseException):
    pass


class _CappedWriter(io.TextIOBase):
    def __init__(self, cap):
        self.parts = []
        self.size = 0
        self.cap = cap
        self.truncated = False

    def writable(self):
        return True

    def write(self, s):
        if not isinstance(s, str):
            raise TypeError("write() argument must be str, not " + type(s).__name__)
        room = self.cap - self.size
        if len(s) > room:
            self.truncated = True
            s = s[:max(room, 0)]
        self.parts.append(s)
        self.size += len(s)
        return len(s)

    def getvalue(self):
        return "".join(self.parts)


def _clip(s, n=MESSAGE_CAP):
    s = _clean(s)
    return s if len(s) <= n else s[: n - 3] + "..."


def _clean(s):
    # Lone surrogates cannot travel as JSON text.
    return s.encode("utf-8", "backslashreplace").decode("utf-8")


class _TooBig(Exception):
    pass


class _Renderer:
    def __init__(self, phase):
        self.nodes = 0
        self.active = set()
        self.phase = phase

    def tree(self, v, depth=0):
        self.nodes += 1
        if self.nodes > MAX_NODES or depth > MAX_DEPTH:
            raise _TooBig()
        if v is None:
            return {"t": "none"}
        if isinstance(v, bool):
            return {"t": "bool", "v": v}
        if isinstance(v, int):
            return {"t": "int", "v": str(int(v))}
        if isinstance(v, float):
            return {"t": "float", "v": _float_text(v)}
        if isinstance(v, str):
            return {"t": "str", "v": _clean(str(v))}
        if isinstance(v, (bytes, bytearray)):
            return {"t": "bytes", "v": bytes(v).hex()}
        if isinstance(v, (list, tuple, set, frozenset, dict)):
            if id(v) in self.active:
                return {"t": "cycle"}
            self.active.add(id(v))
            try:
                if isinstance(v, dict):
                    items = [[self.tree(k, depth + 1), self.tree(x, depth + 1)] for k, x in v.items()]
                    items.sort(key=lambda kv: _canonical(kv[0]))
                    return {"t": "dict", "v": items}
                elems = [self.tree(x, depth + 1) for x in v]
                if isinstance(v, (set, frozenset)):
                    elems.sort(key=_canonical)
                    return {"t": "set", "v": elems}
                return {"t": "tuple" if isinstance(v, tuple) else "list", "v": elems}
            finally:
                self.active.discard(id(v))
        return {"t": "object", "type": type(v).__name__, "v": self.safe_repr(v)}

    def safe_repr(self, v):
        self.phase[0] = "student"
        try:
            r = _repr(v)
        except BaseException:
            r = "<unrepresentable " + type(v).__name__ + ">"
        finally:
            self.phase[0] = "harness"
        return _clip(re.sub(r" at 0x[0-9a-fA-F]+", "", r))


def _float_text(x):
    if x != x:
        return "nan"
    if x in (float("inf"), float("-inf")):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _canonical(tree):
    return json.dumps(tree, sort_keys=True, ensure_ascii=True)


def render(t):
    kind = t["t"]
    if kind == "none":
        return "None"
    if kind == "bool":
        return "True" if t["v"] else "False"
    if kind == "int":
        return t["v"]
    if kind == "float":
        return repr(float(t["v"]))
    if kind == "str":
        return repr(t["v"])
    if kind == "bytes":
        return repr(bytes.fromhex(t["v"]))
    if kind == "list":
        return "[" + ", ".join(render(x) for x in t["v"]) + "]"
    if kind == "tuple":
        inner = ", ".join(render(x) for x in t["v"])
        return "(" + inner + ("," if len(t["v"]) == 1 else "") + ")"
    if kind == "set":
        return "{" + ", ".join(render(x) for x in t["v"]) + "}" if t["v"] else "set()"
    if kind == "dict":
        return "{" + ", ".join(render(k) + ": " + render(x) for k, x in t["v"]) + "}"
    if kind == "cycle":
        return "[...]"
    if kind == "digest":
        return "<" + t["type"] + " of " + str(t["size"]) + " bytes>"
    return t.get("v", "?")


def value_record(v, phase):
    r = _Renderer(phase)
    try:
        tree = r.tree(v)
        text = _canonical(tree)
    except _TooBig:
        tree = None
        text = None
    if text is None or len(text) > DIGEST_OVER:
        # Oversized values compare by digest of their canonical form.
        body = text if text is not None else _clip(r.safe_repr(v), 10**7)
        tree = {
            "t": "digest",
            "type": type(v).__name__,
            "size": len(body),
            "v": hashlib.sha256(body.encode("utf-8")).hexdigest(),
        }
    return tree, _clip(render(tree), 4000)


def _error_record(exc, where, filename=None):
    line = None
    if filename is not None:
        for frame in traceback.extract_tb(exc.__traceback__):
            if frame.filename == filename:
                line = frame.lineno
        if isinstance(exc, SyntaxError) and exc.filename == filename:
            line = exc.lineno
    return {
        "where": where,
        "class": type(exc).__name__,
        "message": _clip(str(exc)),
        "line": line,
    }


def _make_trap(name, original, phase, violations):
    def trap(*args, **kwargs):
        if phase[0] != "student":
            return original(*args, **kwargs)
        violations.append(name)
        raise TabooViolation(name)

    trap.__name__ = name
    return trap


def run(job):
    phase = ["harness"]
    violations = []
    rng = _SplitMix64(int(job.get("seed", "0")))

    def _rint(lo, hi):
        if not isinstance(lo, int) or not isinstance(hi, int):
            raise TypeError("_rint bounds must be integers")
        if lo > hi:
            raise ValueError("_rint(lo, hi) needs lo <= hi")
        if hi - lo >= MASK:
            raise ValueError("_rint range too large")
        return lo + rng.below(hi - lo + 1)

    originals = {}
    for name in job.get("taboo", []):
        if not hasattr(builtins, name):
            continue
        original = getattr(builtins, name)
        originals[name] = original

        setattr(builtins, name, _make_trap(name, original, phase, violations))

    ns = {"__name__": "__main__", "__builtins__": builtins.__dict__, "_rint": _rint}
    report = {
        "version": 1,
        "stdout": "",
        "stdout_truncated": False,
        "error": None,
        "taboo": None,
        "probes": [],
        "checks": [],
    }

    try:
        probes = [(e, _compile(e, "<autotest>", "eval")) for e in job.get("probes", [])]
    except SyntaxError as exc:
        report["error"] = _error_record(exc, "harness")
        report["error"]["message"] = "autotest does not compile: " + report["error"]["message"]
        return report

    out = _CappedWriter(int(job.get("stdout_cap", 65536)))
    saved_stdout, saved_stdin = sys.stdout, sys.stdin
    sys.stdout = out
    sys.stdin = io.StringIO(job.get("stdin") or "")
    student_file = job.get("student_file", "student.py")

    def finish():
        sys.stdout, sys.stdin = saved_stdout, saved_stdin
        for name, original in originals.items():
            setattr(builtins, name, original)
        report["stdout"] = _clean(out.getvalue())
        report["stdout_truncated"] = out.truncated
        if violations:
            report["taboo"] = violations[0]
        return report

    try:
        phase[0] = "precode"
        _exec(_compile(job.get("precode", ""), "<precode>", "exec"), ns)
    except BaseException as exc:
        phase[0] = "harness"
        report["error"] = _error_record(exc, "precode")
        return finish()

    try:
        with open(student_file, encoding="utf-8", errors="surrogateescape") as f:
            source = f.read()
        os.unlink(student_file)
    except OSError as exc:
        phase[0] = "harness"
        report["error"] = _error_record(exc, "harness")
        return finish()

    try:
        phase[0] = "student"
        _exec(_compile(source, "student.py", "exec"), ns)
    except SystemExit as exc:
        if exc.code not in (None, 0):
            report["error"] = _error_record(exc, "student", "student.py")
    except TabooViolation:
        pass
    except BaseException as exc:
        report["error"] = _error_record(exc, "student", "student.py")
    finally:
        phase[0] = "harness"

    if report["error"] is not None or violations:
        return finish()

    values = {}
    for expr, code in probes:
        try:
            phase[0] = "student"
            value = _eval(code, ns)
            phase[0] = "harness"
        except TabooViolation:
            break
        except BaseException as exc:
            phase[0] = "harness"
            report["probes"].append(
                {"expr": expr, "ok": False, "error": _error_record(exc, "probe", "student.py")}
            )
            continue
        tree, text = value_record(value, phase)
        values[expr] = value
        report["probes"].append({"expr": expr, "ok": True, "value": tree, "render": text})
    phase[0] = "harness"
    if violations:
        return finish()

    checker = job.get("checker")
    if checker is not None:
        records = report["checks"]

        def record(passed, message=""):
            records.append({"passed": bool(passed), "message": _clip(str(message))})

        student_view = {k: v for k, v in ns.items() if k != "__builtins__"}
        checker_ns = {
            "__name__": "__checker__",
            "student": student_view,
            "stdout": out.getvalue(),
            "probes": values,
            "report": record,
        }
        sys.stdout = io.StringIO()
        try:
            phase[0] = "checker"
            _exec(_compile(checker, "<checker>", "exec"), checker_ns)
        except BaseException as exc:
            report["error"] = _error_record(exc, "checker")
        finally:
            phase[0] = "harness"

    return finish()


def emit(nonce, report):
    data = json.dumps(report, ensure_ascii=True, sort_keys=True)
    stream = sys.__stdout__.buffer
    stream.write(b"\n" + (SENTINEL + nonce).encode("ascii") + b"\n" + VERSION)
    stream.write(data.encode("ascii") + b"\n")
    stream.flush()


def main():
    try:
        with open("job.json", encoding="utf-8") as f:
            job = json.load(f)
        os.unlink("job.json")
        nonce = str(job["nonce"])
    except Exception as exc:
        sys.stderr.write("pybox harness: unreadable job: %r\n" % (exc,))
        sys.stderr.flush()
        os._exit(3)
    try:
        report = run(job)
    except BaseException as exc:
        report = {
            "version": 1,
            "stdout": "",
            "stdout_truncated": False,
            "error": _error_record(exc, "harness"),
            "taboo": None,
            "probes": [],
            "checks": [],
        }
    emit(nonce, report)
    # Skip atexit hooks and finalizers the student may have registered.
    os._exit(0)


if __name__ == "__main__":
    main()
