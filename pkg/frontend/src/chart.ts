// Plain canvas rendering: prior/likelihood/posterior curves with the cutoff
// marked by a red dashed line and observed measurements by black dashed
// lines, plus the what-if probability curve.

import { DecisionResponse } from './api.js';
import { WhatIfCurve } from './whatif.js';

const MARGIN = { top: 12, right: 12, bottom: 28, left: 44 };

interface Frame {
  x: (v: number) => number;
  y: (v: number) => number;
  width: number;
  height: number;
}

function frame(
  ctx: CanvasRenderingContext2D,
  xMin: number,
  xMax: number,
  yMin: number,
  yMax: number,
): Frame {
  const w = ctx.canvas.width;
  const h = ctx.canvas.height;
  return {
    x: (v) => MARGIN.left + ((v - xMin) / (xMax - xMin)) * (w - MARGIN.left - MARGIN.right),
    y: (v) => h - MARGIN.bottom - ((v - yMin) / (yMax - yMin)) * (h - MARGIN.top - MARGIN.bottom),
    width: w,
    height: h,
  };
}

function polyline(
  ctx: CanvasRenderingContext2D,
  f: Frame,
  xs: number[],
  ys: number[],
  color: string,
  width = 1.5,
): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  for (let i = 0; i < xs.length; i++) {
    const px = f.x(xs[i]);
    const py = f.y(ys[i]);
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  }
  ctx.stroke();
}

function vline(
  ctx: CanvasRenderingContext2D,
  f: Frame,
  x: number,
  color: string,
  dashed = true,
): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.2;
  ctx.setLineDash(dashed ? [5, 4] : []);
  ctx.beginPath();
  ctx.moveTo(f.x(x), f.y(0));
  ctx.lineTo(f.x(x), MARGIN.top);
  ctx.stroke();
  ctx.setLineDash([]);
}

function axes(ctx: CanvasRenderingContext2D, f: Frame, xMin: number, xMax: number): void {
  ctx.strokeStyle = '#444';
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(MARGIN.left, MARGIN.top);
  ctx.lineTo(MARGIN.left, f.y(0));
  ctx.lineTo(f.width - MARGIN.right, f.y(0));
  ctx.stroke();
  ctx.fillStyle = '#444';
  ctx.font = '11px sans-serif';
  ctx.textAlign = 'center';
  const step = (xMax - xMin) / 6;
  for (let v = xMin; v <= xMax + 1e-9; v += step) {
    ctx.fillText(v.toFixed(1), f.x(v), f.height - 10);
  }
}

export function drawDensities(
  canvas: HTMLCanvasElement,
  resp: DecisionResponse,
): void {
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const lo = Math.min(resp.cutoff - 3, resp.x1 - 2);
  const hi = Math.max(resp.cutoff + 5, resp.x1 + 4);
  const within = resp.grid
    .map((g, i) => ({ g, i }))
    .filter(({ g }) => g >= lo && g <= hi);
  const xs = within.map(({ g }) => g);
  const maxY = Math.max(
    ...within.map(({ i }) => resp.posterior_density[i]),
    ...within.map(({ i }) => resp.prior_density[i]),
    ...within.map(({ i }) => resp.likelihood_density[i]),
  );
  const f = frame(ctx, lo, hi, 0, maxY * 1.08);
  axes(ctx, f, lo, hi);
  polyline(ctx, f, xs, within.map(({ i }) => resp.prior_density[i]), '#8a8ad1');
  polyline(ctx, f, xs, within.map(({ i }) => resp.likelihood_density[i]), '#76b474');
  polyline(ctx, f, xs, within.map(({ i }) => resp.posterior_density[i]), '#222', 2.2);
  vline(ctx, f, resp.cutoff, '#cc2222');
  vline(ctx, f, resp.x1, '#111');
  if (resp.x2 !== null) vline(ctx, f, resp.x2, '#111');
}

export function drawWhatIf(
  canvas: HTMLCanvasElement,
  curve: WhatIfCurve,
  cutoff: number,
  band: [number, number],
): void {
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const xs = curve.points.map((p) => p.x2);
  const ys = curve.points.map((p) => p.probability);
  const f = frame(ctx, xs[0], xs[xs.length - 1], 0, 1);
  axes(ctx, f, xs[0], xs[xs.length - 1]);
  // decision band
  ctx.fillStyle = 'rgba(240, 200, 80, 0.18)';
  ctx.fillRect(
    MARGIN.left,
    f.y(band[1]),
    f.width - MARGIN.left - MARGIN.right,
    f.y(band[0]) - f.y(band[1]),
  );
  polyline(ctx, f, xs, ys, '#1b6ca8', 2);
  vline(ctx, f, cutoff, '#cc2222');
  ctx.fillStyle = '#444';
  ctx.textAlign = 'left';
  ctx.fillText('P(true level ≥ cutoff) vs hypothetical repeat', MARGIN.left + 4, MARGIN.top + 10);
}
