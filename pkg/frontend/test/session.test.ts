/** Pass-through tests against recorded service responses.
 *
 * The fixtures in fixtures/contract.json are captured from the real HTTP
 * service (scripts/make_ui_fixtures.py), so these tests pin the UI to the
 * actual contract: every value the session exposes for rendering must be a
 * served field, byte-for-byte where formatting applies.
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { ApiClient, Transport } from "../src/api.js";
import { formatNumber, gridToCsv, PatientSession } from "../src/session.js";

const here = dirname(fileURLToPath(import.meta.url));
const FIX = JSON.parse(readFileSync(join(here, "fixtures", "contract.json"), "utf8"));

interface Call {
  path: string;
  body: any;
}

function makeTransport(log: Call[], mutate?: (key: string, body: any) => any): Transport {
  return async (path, init) => {
    const body = init?.body ? JSON.parse(init.body as string) : null;
    log.push({ path, body });
    let key: string;
    if (path === "/models") key = "models";
    else if (path === "/models/demo") key = "detail_demo";
    else if (path === "/models/demo2") key = "detail_demo2";
    else if (path === "/models/demo/survfit")
      key = body.subject.rows.length === 1 ? "survfit_v1" : "survfit_v2";
    else if (path === "/models/demo/predict-long")
      key = body.subject.rows.length === 1 ? "predict_long_v1" : "predict_long_v2";
    else if (path === "/bma/survfit") key = "bma_pair_v2";
    else throw new Error(`unexpected request path ${path}`);
    let payload = FIX[key].body;
    if (mutate) payload = mutate(key, JSON.parse(JSON.stringify(payload)));
    return new Response(JSON.stringify(payload), {
      status: FIX[key].status,
      headers: { "Content-Type": "application/json" },
    });
  };
}

function makeSession(log: Call[], mutate?: (key: string, body: any) => any) {
  const api = new ApiClient("", makeTransport(log, mutate));
  return new PatientSession(api, { debounceMs: 10, M: 50, seed: 3, mode: "mc" });
}

async function primedSession(log: Call[]) {
  const session = makeSession(log);
  await session.selectModels(["demo"]);
  session.setBaseline({ x: 1.0 });
  session.addMeasurement(0.0, 0.6);
  await session.settle();
  return session;
}

describe("S1 pass-through", () => {
  it("exposes exactly the served survival grid after the first measurement", async () => {
    const log: Call[] = [];
    const session = await primedSession(log);
    const view = session.getView();
    const served = FIX.survfit_v1.body;

    expect(view.survival).not.toBeNull();
    expect(view.survival!.times).toEqual(served.times);
    expect(view.survival!.mean).toEqual(served.mean);
    expect(view.survival!.median).toEqual(served.median);
    expect(view.survival!.lower).toEqual(served.lower);
    expect(view.survival!.upper).toEqual(served.upper);
    expect(view.survival!.conditioning_time).toBe(served.conditioning_time);
    expect(view.survival!.mean[0]).toBe(1.0);

    const servedLong = FIX.predict_long_v1.body;
    expect(view.longitudinal!.mean).toEqual(servedLong.mean);
    expect(view.longitudinal!.lower).toEqual(servedLong.lower);
    expect(view.longitudinal!.upper).toEqual(servedLong.upper);
  });

  it("sends the measurement history and baseline exactly as entered", async () => {
    const log: Call[] = [];
    await primedSession(log);
    const survfit = log.find((c) => c.path === "/models/demo/survfit")!;
    expect(survfit.body.subject).toEqual(FIX.requests.subject_v1);
    expect(survfit.body.M).toBe(50);
    expect(survfit.body.seed).toBe(3);
  });

  it("adding a measurement advances the conditioning time and keeps a ghost", async () => {
    const log: Call[] = [];
    const session = await primedSession(log);
    const before = session.getView().survival!;

    expect(session.addMeasurement(1.0, 0.9)).toBe(true);
    await session.settle();
    const view = session.getView();

    expect(view.survival!.conditioning_time).toBe(FIX.survfit_v2.body.conditioning_time);
    expect(view.survival!.conditioning_time).toBeGreaterThan(before.conditioning_time);
    expect(view.survival!.times[0]).toBeGreaterThan(before.times[0]);
    expect(view.ghosts).toHaveLength(1);
    expect(view.ghosts[0].conditioningTime).toBe(before.conditioning_time);
    expect(view.ghosts[0].mean).toEqual(before.mean);
  });

  it("rejects out-of-order measurement times without issuing a request", async () => {
    const log: Call[] = [];
    const session = await primedSession(log);
    const requestsBefore = log.length;

    expect(session.addMeasurement(-1.0, 0.4)).toBe(false);
    expect(session.addMeasurement(0.0, 0.4)).toBe(false);
    await session.settle();

    expect(session.getView().validationMessage).toMatch(/not after the last entered/);
    expect(log.length).toBe(requestsBefore);
    expect(session.measurements).toHaveLength(1);
  });

  it("requires a selected model before prediction", async () => {
    const log: Call[] = [];
    const session = makeSession(log);
    expect(session.addMeasurement(0.0, 0.6)).toBe(false);
    expect(session.getView().validationMessage).toMatch(/select at least one model/);
    expect(log).toHaveLength(0);
  });

  it("horizon readout repeats served fields at the grid point", async () => {
    const log: Call[] = [];
    const session = await primedSession(log);
    const served = FIX.survfit_v1.body;
    const i = 5;
    const u = served.times[i];

    expect(session.setHorizon(u)).toBe(true);
    await session.settle();
    const h = session.getView().horizon!;
    expect(h.mean).toBe(served.mean[i]);
    expect(h.lower).toBe(served.lower[i]);
    expect(h.upper).toBe(served.upper[i]);
  });

  it("rejects horizons at or before the conditioning time", async () => {
    const log: Call[] = [];
    const session = await primedSession(log);
    expect(session.setHorizon(0.0)).toBe(false);
    expect(session.getView().validationMessage).toMatch(/must exceed the conditioning time/);
  });

  it("horizon beyond the served grid issues a grid-extension request", async () => {
    const log: Call[] = [];
    const session = await primedSession(log);
    const maxServed = Math.max(...session.getView().survival!.times);
    const before = log.filter((c) => c.path === "/models/demo/survfit").length;

    expect(session.setHorizon(maxServed + 5.0)).toBe(true);
    await session.settle();
    const survfits = log.filter((c) => c.path === "/models/demo/survfit");
    expect(survfits.length).toBe(before + 1);
    expect(survfits[survfits.length - 1].body.times).toContain(maxServed + 5.0);
  });

  it("export CSV equals the server response byte-for-byte after canonical formatting", async () => {
    const log: Call[] = [];
    const session = await primedSession(log);
    const csv = session.exportTable()!;

    const served = FIX.survfit_v1.body;
    const expected =
      "times,mean,median,lower,upper\n" +
      served.times
        .map((t: number, i: number) =>
          [t, served.mean[i], served.median[i], served.lower[i], served.upper[i]]
            .map((v) => JSON.stringify(v))
            .join(","),
        )
        .join("\n") +
      "\n";
    expect(csv).toBe(expected);
    expect(Buffer.from(csv).equals(Buffer.from(expected))).toBe(true);
  });

  it("export is unavailable before any prediction", () => {
    const session = makeSession([]);
    expect(session.exportTable()).toBeNull();
  });

  it("served nonincreasing mean stays nonincreasing in the view", async () => {
    const log: Call[] = [];
    const session = await primedSession(log);
    const mean = session.getView().survival!.mean;
    for (let i = 1; i < mean.length; i++) {
      expect(mean[i]).toBeLessThanOrEqual(mean[i - 1]);
    }
  });

  it("debounces rapid edits into a single request burst", async () => {
    const log: Call[] = [];
    const session = makeSession(log);
    await session.selectModels(["demo"]);
    session.setBaseline({ x: 1.0 });
    session.addMeasurement(0.0, 0.6);
    session.addMeasurement(1.0, 0.9);
    await session.settle();
    expect(log.filter((c) => c.path === "/models/demo/survfit")).toHaveLength(1);
  });

  it("caps ghost traces at 5", async () => {
    const log: Call[] = [];
    let n = 0;
    const session = new PatientSession(
      new ApiClient(
        "",
        makeTransport(log, (key, body) => {
          if (key.startsWith("survfit")) body.conditioning_time = n++;
          return body;
        }),
      ),
      { debounceMs: 5, M: 50, seed: 3, mode: "mc" },
    );
    await session.selectModels(["demo"]);
    for (let k = 0; k < 8; k++) {
      session.addMeasurement(k, 0.5 + 0.01 * k);
      await session.settle();
    }
    expect(session.getView().ghosts.length).toBe(5);
  });
});

describe("S2 BMA toggle", () => {
  it("two copies of one artifact leave the displayed curve unchanged", async () => {
    const single: Call[] = [];
    const s1 = makeSession(single);
    await s1.selectModels(["demo"]);
    s1.setBaseline({ x: 1.0 });
    s1.addMeasurement(0.0, 0.6);
    s1.addMeasurement(1.0, 0.9);
    await s1.settle();

    const combined: Call[] = [];
    const s2 = makeSession(combined);
    await s2.selectModels(["demo", "demo2"]);
    s2.setBmaEnabled(true);
    s2.setBaseline({ x: 1.0 });
    s2.addMeasurement(0.0, 0.6);
    s2.addMeasurement(1.0, 0.9);
    await s2.settle();

    const a = s1.getView().survival!;
    const b = s2.getView().survival!;
    expect(b.times.map(formatNumber)).toEqual(a.times.map(formatNumber));
    expect(b.mean.map(formatNumber)).toEqual(a.mean.map(formatNumber));
    expect(b.lower.map(formatNumber)).toEqual(a.lower.map(formatNumber));
    expect(b.upper.map(formatNumber)).toEqual(a.upper.map(formatNumber));
    expect(gridToCsv(b)).toBe(gridToCsv(a));

    const w = s2.getView().weights!;
    expect(w).toEqual(FIX.bma_pair_v2.body.weights);
    expect(Object.values(w).reduce((x, y) => x + y, 0)).toBeCloseTo(1.0, 12);
  });
});
