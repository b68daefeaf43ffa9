from xml.etree import ElementTree

from cdmp_bag.plotting import episode_charts, line_chart, write_svg

from .conftest import short_trace

SVG = "{http://www.w3.org/2000/svg}"


def test_chart_is_well_formed():
    svg = line_chart({"a": ([0, 1, 2], [0.0, 0.5, 1.0])}, "Title <1>", "x", "y", {"target": 0.6})
    root = ElementTree.fromstring(svg)
    assert root.tag == f"{SVG}svg"
    polylines = root.findall(f"{SVG}polyline")
    assert len(polylines) == 1
    assert len(polylines[0].get("points").split()) == 3
    assert any(line.get("stroke-dasharray") for line in root.findall(f"{SVG}line"))
    assert "Title &lt;1&gt;" in svg


def test_points_span_the_plot_area():
    svg = line_chart({"a": ([0, 10], [5.0, 5.0])})
    points = ElementTree.fromstring(svg).find(f"{SVG}polyline").get("points").split()
    assert points == ["48.00,180.00", "592.00,180.00"]


def test_chart_is_deterministic():
    series = {"seed 1": ([0, 1], [0.1, 0.2]), "seed 2": ([0, 1, 2], [0.3, 0.2, 0.1])}
    assert line_chart(series) == line_chart(dict(series))


def test_episode_charts(tmp_path):
    charts = episode_charts([short_trace(1), short_trace(2, (0.2, 0.9))])
    assert set(charts) == {"area_ratio", "volume_ratio", "delta_elongation"}
    for name, svg in charts.items():
        write_svg(tmp_path / f"{name}.svg", svg)
        root = ElementTree.parse(tmp_path / f"{name}.svg").getroot()
        assert len(root.findall(f"{SVG}polyline")) == 2
    assert "seed 2" in charts["area_ratio"]
