#!/usr/bin/env python
# std lib imports
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

# 3 party imports
import numpy as np
import plotly.graph_objects as go
from matplotlib.figure import Figure

# project imports
from simic.model.attention_maps import AttentionMaps, upsample_nearest

# {trace_name: {x_value: y_value}}
FunctionData = Dict[str, Dict[float, float]]


class Plot(go.Figure):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)


def create_plotly_figure(
    traces: Sequence[go.Trace],
    title: Optional[str] = None,
    xaxis_title: Optional[str] = None,
    yaxis_title: Optional[str] = None
) -> Plot:
    fig = Plot()

    for trace in traces:
        fig.add_trace(trace)

    fig.update_layout(
        title=title if title else "",
        xaxis_title=xaxis_title if xaxis_title else "",
        yaxis_title=yaxis_title if yaxis_title else "",
        template="ggplot2",
        font=dict(size=14),
        margin=dict(l=40, r=40, t=60, b=40)
    )

    return fig


def generate_lineplot(
    data: FunctionData = None,
    title: Optional[str] = None,
    xaxis_title: Optional[str] = None,
    yaxis_title: Optional[str] = None,
    log_y: bool = False
) -> Plot:
    """
    Generate a line plot from structured input data of correct format.

    Args:
        data (FunctionData, optional): A dictionary in the format
            {trace_name: {x_value: y_value}}. Defaults to `None`,
            meaning an empty figure.
        title (str, optional): Title of the line plot. Defaults to `None`,
            meaning no title is displayed unless specified.
        xaxis_title (str, optional): Label for the x-axis. Defaults to `None`.
        yaxis_title (str, optional): Label for the y-axis. Defaults to `None`.
        log_y (bool, optional): Logarithmic y-axis. Defaults to False.

    Returns:
        Plot: A Plotly line plot figure.
    """
    traces = list()
    for trace_name, trace_data in (data or {}).items():
        try:
            x = list(trace_data.keys())
            y = list(trace_data.values())
        except AttributeError:
            raise ValueError(
                "Data for lineplot have to be in following format: {trace1_name: {x: y}}"
            )

        traces.append(go.Scatter(name=trace_name, x=x, y=y, mode="lines"))

    fig = create_plotly_figure(traces, title=title, xaxis_title=xaxis_title, yaxis_title=yaxis_title)
    if log_y:
        fig.update_yaxes(type="log")
    return fig


def training_curve(log, title: Optional[str] = None) -> Plot:
    """Train and validation loss per epoch of a `TrainLog`; the kept epoch is marked."""
    epochs = range(1, log.epochs + 1)
    fig = generate_lineplot(
        {
            "train": dict(zip(epochs, log.train_loss)),
            "val": dict(zip(epochs, log.val_loss)),
        },
        title=title,
        xaxis_title="epoch",
        yaxis_title="Huber loss per sample",
        log_y=True,
    )
    if log.best_epoch >= 0:
        fig.add_vline(x=log.best_epoch + 1, line_dash="dash", line_color="grey")
    return fig


def render_attention_overlay(
    image: np.ndarray,
    maps: AttentionMaps,
    path: Union[str, Path],
    alpha: float = 0.5,
    colormap: str = "jet"
) -> Path:
    """
    Draws every head's attention over the input image and saves a PNG.

    Each head grid is upsampled to the image size, stretched to [0, 1] and
    coloured with `colormap`, so red marks high and blue low attention.

    Args:
        image (np.ndarray): (H, W) greyscale input.
        maps (AttentionMaps): Weights of one forward pass on `image`.
        path (str | Path): Output PNG.
        alpha (float, optional): Opacity of the colour layer. Defaults to 0.5.
        colormap (str, optional): Matplotlib colormap name. Defaults to "jet".

    Returns:
        Path: The written file.
    """
    image = np.asarray(image)
    fig = Figure(figsize=(3.0 * maps.heads, 3.2))
    axes = fig.subplots(1, maps.heads, squeeze=False)[0]
    for head, ax in enumerate(axes):
        grid = upsample_nearest(maps.weights[head], image.shape)
        low, high = grid.min(), grid.max()
        scaled = (grid - low) / (high - low) if high > low else np.full(grid.shape, 0.5)
        ax.imshow(image, cmap="gray", vmin=0, vmax=255)
        ax.imshow(scaled, cmap=colormap, vmin=0.0, vmax=1.0, alpha=alpha)
        ax.set_title(f"head {head}" if maps.heads > 1 else (maps.sample_id or "attention"))
        ax.axis("off")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    return path
