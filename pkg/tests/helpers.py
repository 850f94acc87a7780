"""Small PBIR builders shared by tests."""

from permlens.pbir import parse_framework

PEP = "virtualinvoke this <android.content.Context: void checkPermission(String)>"


def framework(body, perms=("P1", "P2", "P3")):
    head = "".join(f"  permission {p}\n" for p in perms)
    return parse_framework(f'framework "t" {{\n{head}{body}\n}}\n', "t.pbir")


def graph_framework(n, edges, checks, perms=None):
    """One public class with methods m0..m{n-1}; ``edges`` are (i, j) calls, ``checks`` map i -> permission."""
    perms = perms or sorted(set(checks.values())) or ["P1"]
    lines = ["  public class g.G {"]
    for i in range(n):
        lines.append(f"    public method m{i}() {{")
        if i in checks:
            lines.append(f'      {PEP}("{checks[i]}")')
        for a, b in edges:
            if a == i:
                lines.append(f"      virtualinvoke this <g.G: void m{b}()>()")
        lines.append("    }")
    lines.append("  }")
    return framework("\n".join(lines), perms)


def chain_framework(n):
    """Each method allocates an object and passes it down a chain of length ``n``."""
    lines = ["  public class c.Node {", "    field next: c.Node"]
    for i in range(n):
        nxt = f"      virtualinvoke o <c.Node: void m{i + 1}(c.Node)>(o)" if i + 1 < n else ""
        lines += [f"    public method m{i}(p: c.Node) {{", "      o = new c.Node", "      o.next = p", nxt, "    }"]
    lines.append("  }")
    return framework("\n".join(l for l in lines if l), ())
