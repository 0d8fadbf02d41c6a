"""Minimal self-contained SVG 1.1 line charts (no plotting dependency)."""

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
)


@dataclass
class Series:
    label: str
    xs: list[float]
    ys: list[float]
    color: str = ""
    dash: str = ""  # e.g. "6,3" for dashed lines

    def __post_init__(self):
        if len(self.xs) != len(self.ys):
            raise ValueError(
                f"series {self.label!r}: {len(self.xs)} xs vs {len(self.ys)} ys"
            )
        if not self.xs:
            raise ValueError(f"series {self.label!r} is empty")


@dataclass
class LineChart:
    title: str
    x_label: str
    y_label: str
    series: list[Series] = field(default_factory=list)
    width: int = 640
    height: int = 400
    margin_left: int = 64
    margin_right: int = 150
    margin_top: int = 40
    margin_bottom: int = 48
    n_ticks: int = 5

    def add(self, series: Series) -> None:
        if not series.color:
            series.color = PALETTE[len(self.series) % len(PALETTE)]
        self.series.append(series)

    def _bounds(self) -> tuple[float, float, float, float]:
        xs = [x for s in self.series for x in s.xs]
        ys = [y for s in self.series for y in s.ys]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        if x0 == x1:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y0 == y1:
            y0, y1 = y0 - 0.5, y1 + 0.5
        return x0, x1, y0, y1

    def render(self) -> str:
        if not self.series:
            raise ValueError("chart has no series")
        x0, x1, y0, y1 = self._bounds()
        pw = self.width - self.margin_left - self.margin_right
        ph = self.height - self.margin_top - self.margin_bottom

        def sx(x: float) -> float:
            return self.margin_left + (x - x0) / (x1 - x0) * pw

        def sy(y: float) -> float:
            return self.margin_top + ph - (y - y0) / (y1 - y0) * ph

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">',
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
            f'<text x="{self.width / 2:.1f}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{escape(self.title)}</text>',
        ]
        # axes
        ax = self.margin_left
        ay = self.margin_top + ph
        parts.append(
            f'<line x1="{ax}" y1="{self.margin_top}" x2="{ax}" y2="{ay}" '
            f'stroke="black" stroke-width="1"/>'
        )
        parts.append(
            f'<line x1="{ax}" y1="{ay}" x2="{ax + pw}" y2="{ay}" '
            f'stroke="black" stroke-width="1"/>'
        )
        for i in range(self.n_ticks + 1):
            fx = x0 + (x1 - x0) * i / self.n_ticks
            px = sx(fx)
            parts.append(
                f'<line x1="{px:.1f}" y1="{ay}" x2="{px:.1f}" y2="{ay + 4}" stroke="black"/>'
            )
            parts.append(
                f'<text x="{px:.1f}" y="{ay + 16}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="10">{_fmt(fx)}</text>'
            )
            fy = y0 + (y1 - y0) * i / self.n_ticks
            py = sy(fy)
            parts.append(
                f'<line x1="{ax - 4}" y1="{py:.1f}" x2="{ax}" y2="{py:.1f}" stroke="black"/>'
            )
            parts.append(
                f'<text x="{ax - 6}" y="{py + 3:.1f}" text-anchor="end" '
                f'font-family="sans-serif" font-size="10">{_fmt(fy)}</text>'
            )
        parts.append(
            f'<text x="{ax + pw / 2:.1f}" y="{self.height - 8}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{escape(self.x_label)}</text>'
        )
        parts.append(
            f'<text x="14" y="{self.margin_top + ph / 2:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 14 {self.margin_top + ph / 2:.1f})">'
            f"{escape(self.y_label)}</text>"
        )
        for s in self.series:
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(s.xs, s.ys))
            dash = f' stroke-dasharray="{s.dash}"' if s.dash else ""
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{s.color}" '
                f'stroke-width="1.5"{dash}/>'
            )
        # legend in the right margin
        lx = self.margin_left + pw + 12
        for i, s in enumerate(self.series):
            ly = self.margin_top + 10 + i * 16
            dash = f' stroke-dasharray="{s.dash}"' if s.dash else ""
            parts.append(
                f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" '
                f'stroke="{s.color}" stroke-width="1.5"{dash}/>'
            )
            parts.append(
                f'<text x="{lx + 23}" y="{ly + 3}" font-family="sans-serif" '
                f'font-size="10">{escape(s.label)}</text>'
            )
        parts.append("</svg>")
        return "\n".join(parts)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())
            fh.write("\n")


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000 or abs(v) < 0.01:
        return f"{v:.2e}"
    return f"{v:.4g}"
