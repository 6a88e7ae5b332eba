/**
 * Session tracking mirror: folds page requests into visit history with the
 * same 30-minute inactivity timeout and derived counters as the reference
 * pipeline.
 */

import { fnv1a64 } from "./fnv1a.js";
import { RawRecord } from "./preprocess.js";

export const SESSION_TIMEOUT_S = 30 * 60;
export const SECONDS_SINCE_LAST_MAX = 30 * 86400;

export interface SessionState {
  sessionId: string;
  sessionStart: number;
  pagesThisSession: number;
  priorPageRequests: [string, number][]; // (url hash as decimal string, timestamp)
  pagesVisitedTotal: number;
  secondsSinceLastVisit: number;
  visitsCount: number;
}

export function freshSession(): SessionState {
  return { sessionId: "", sessionStart: 0, pagesThisSession: 0, priorPageRequests: [],
           pagesVisitedTotal: 0, secondsSinceLastVisit: SECONDS_SINCE_LAST_MAX,
           visitsCount: 0 };
}

export function computeSessionFeatures(prior: SessionState, now: number, url: string,
                                       timeoutS = SESSION_TIMEOUT_S): SessionState {
  let gap = SECONDS_SINCE_LAST_MAX;
  let newSession = true;
  if (prior.priorPageRequests.length > 0) {
    const lastTs = prior.priorPageRequests[prior.priorPageRequests.length - 1][1];
    if (now < lastTs) throw new Error(`page request at ${now} precedes last seen ${lastTs}`);
    gap = now - lastTs;
    newSession = gap > timeoutS;
  }
  const requests: [string, number][] = [...prior.priorPageRequests,
                                        [fnv1a64(url).toString(), now]];
  if (newSession) {
    const visits = prior.visitsCount + 1;
    return { sessionId: `s${visits}`, sessionStart: now, pagesThisSession: 1,
             priorPageRequests: requests, pagesVisitedTotal: prior.pagesVisitedTotal + 1,
             secondsSinceLastVisit: gap, visitsCount: visits };
  }
  return { ...prior, pagesThisSession: prior.pagesThisSession + 1,
           priorPageRequests: requests, pagesVisitedTotal: prior.pagesVisitedTotal + 1,
           secondsSinceLastVisit: gap };
}

export function sessionRawFeatures(state: SessionState): RawRecord {
  return {
    is_returning_visitor: state.visitsCount > 1 ? 1 : 0,
    pages_this_session: state.pagesThisSession,
    pages_visited_total: state.pagesVisitedTotal,
    seconds_since_last_visit: state.secondsSinceLastVisit,
    visits_count: state.visitsCount,
  };
}
