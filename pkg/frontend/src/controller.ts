/**
 * Controls the single in-flight render pipeline.
 *
 * Every accepted input event advances the state and schedules a frame
 * request; at most one request runs at a time and only the response matching
 * the latest state is displayed (latest-wins). The event log makes sessions
 * deterministically replayable.
 */

import { SceneClient } from "./client.js";
import {
  InputEvent,
  ViewerState,
  initialState,
  poseFromInput,
  renderUrl,
  replay,
} from "./state.js";

export interface FrameSink {
  showFrame(bytes: ArrayBuffer, state: ViewerState): void;
  showError(message: string): void;
}

export class ViewerController {
  state: ViewerState = initialState();
  readonly eventLog: InputEvent[] = [];
  private requestSeq = 0; // id of the newest wanted frame
  private inFlight = false;
  private displayedSeq = -1;
  private framesShown = 0;

  constructor(private client: SceneClient, private sink: FrameSink) {}

  /** Apply an input event, log it, and (maybe) kick off a render. */
  handle(event: InputEvent): ViewerState {
    this.state = poseFromInput(this.state, event);
    this.eventLog.push(event);
    this.requestSeq += 1;
    void this.pump();
    return this.state;
  }

  /** True while a request is being awaited. */
  get pending(): boolean {
    return this.inFlight;
  }

  get framesDisplayed(): number {
    return this.framesShown;
  }

  /** Rebuild the state purely from the log; equals the live state. */
  replayLog(): ViewerState {
    return replay(this.eventLog);
  }

  private async pump(): Promise<void> {
    if (this.inFlight || this.state.sceneId === null) return;
    if (this.displayedSeq === this.requestSeq) return;
    this.inFlight = true;
    this.state = { ...this.state, pendingRequest: true };
    const seq = this.requestSeq;
    const snapshot = this.state;
    try {
      const bytes = await this.client.renderFrame(renderUrl(snapshot));
      if (seq === this.requestSeq) {
        // nothing newer was requested meanwhile: display it
        this.displayedSeq = seq;
        this.framesShown += 1;
        this.sink.showFrame(bytes, snapshot);
      }
    } catch (err) {
      this.sink.showError(err instanceof Error ? err.message : String(err));
    } finally {
      this.inFlight = false;
      this.state = { ...this.state, pendingRequest: false };
      if (this.displayedSeq !== this.requestSeq) {
        void this.pump(); // a newer state arrived while we were busy
      }
    }
  }

  /** Wait until the displayed frame matches the latest state. */
  async settle(): Promise<void> {
    while (this.inFlight || (this.state.sceneId !== null
                             && this.displayedSeq !== this.requestSeq)) {
      await new Promise(resolve => setTimeout(resolve, 0));
    }
  }

  async newScene(seed?: number): Promise<string> {
    const id = await this.client.createScene(seed);
    this.handle({ kind: "setScene", sceneId: id });
    return id;
  }

  /** Scene edits mint new handles server-side; adopt the new handle. */
  async mirror(axis: 0 | 1): Promise<string> {
    if (!this.state.sceneId) throw new Error("no scene selected");
    const id = await this.client.edit(this.state.sceneId, "mirror", { axis });
    this.handle({ kind: "setScene", sceneId: id });
    return id;
  }

  async rotate(k: number): Promise<string> {
    if (!this.state.sceneId) throw new Error("no scene selected");
    const id = await this.client.edit(this.state.sceneId, "rotate", { k });
    this.handle({ kind: "setScene", sceneId: id });
    return id;
  }
}
